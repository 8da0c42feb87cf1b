"""Droop equilibrium, linearized descriptor dynamics, and eigenmodes.

Every finite-droop source (rotating or virtual, one shared model)
carries three states: angle deviation, filtered real power and filtered
reactive power.  Voltage tracks its droop reference instantly, so
dV = -k_v * dQ_f.  Injection deviations come from linearizing
S = u * conj(Y0 u + Y1 du/dt) at the operating point; the Y1 term puts
derivative couplings on the descriptor matrix E, which collapses to the
identity when the dynamic-admittance coupling is disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .allocation import INFINITE_BUS, SourceParams
from .errors import (
    AssemblyError,
    EquilibriumError,
    NumericError,
    StageError,
)
from .network import ReducedNetwork, VirtualImpedance, reduce_network
from .topology import GridGraph

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
ZERO_MODE_TOL = 1e-8


@dataclass(frozen=True)
class OperatingPoint:
    keep_nodes: tuple[str, ...]
    V: np.ndarray  # pu magnitude per source node
    delta: np.ndarray  # rad
    f_star: float  # Hz
    P: np.ndarray  # pu injections
    Q: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.V * np.exp(1j * self.delta)


@dataclass(frozen=True)
class StateSpace:
    E: np.ndarray
    A: np.ndarray
    state_labels: tuple[str, ...]
    finite_nodes: tuple[str, ...]
    k_f: np.ndarray
    k_v: np.ndarray
    T_c: np.ndarray
    f0: float
    u0: np.ndarray  # operating voltages over the reduced keep set
    net: ReducedNetwork

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class ModeReport:
    eigenvalues: tuple[complex, ...]  # retained modes, sorted
    dominant: complex
    zeta: float
    stable: bool
    n_discarded: int
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[ev.real, ev.imag] for ev in self.eigenvalues],
            "dominant": [self.dominant.real, self.dominant.imag],
            "zeta": self.zeta,
            "stable": self.stable,
            "retained": len(self.eigenvalues),
            "discarded": self.n_discarded,
            "warnings": list(self.warnings),
        }


def _injection(u: np.ndarray, Y0: np.ndarray) -> np.ndarray:
    return u * np.conj(Y0 @ u)


def _complex_jacobians(u: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """dS/d(angle) and dS/d(magnitude) of S = u * conj(Y u)."""
    i_inj = Y @ u
    du = np.diag(u)
    dnorm = np.diag(u / np.abs(u))
    ds_dva = 1j * du @ np.conj(np.diag(i_inj) - Y @ du)
    ds_dvm = du @ np.conj(Y @ dnorm) + np.diag(np.conj(i_inj)) @ dnorm
    return ds_dva, ds_dvm


def _rate_jacobians(u: np.ndarray, Y1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """dS/d(angle rate) and dS/d(magnitude rate) through the dynamic
    admittance: dS = u * conj(Y1 du_dt)."""
    du = np.diag(u)
    ds_dvad = -1j * du @ np.conj(Y1) @ np.diag(np.conj(u))
    ds_dvmd = du @ np.conj(Y1) @ np.diag(np.conj(u) / np.abs(u))
    return ds_dvad, ds_dvmd


def _split(sources: tuple[SourceParams, ...]) -> tuple[list[int], list[int]]:
    finite = [i for i, s in enumerate(sources) if s.kind != INFINITE_BUS]
    pinned = [i for i, s in enumerate(sources) if s.kind == INFINITE_BUS]
    return finite, pinned


def droop_powerflow(
    net: ReducedNetwork, sources: tuple[SourceParams, ...]
) -> OperatingPoint:
    """Newton solve of the droop equilibrium on the reduced network.

    Unknowns are the finite-droop angles (one pinned as reference when no
    infinite bus anchors it), their voltages, and the common equilibrium
    frequency; infinite buses sit at their set-point and absorb slack.
    """
    if len(sources) != net.dim:
        raise EquilibriumError("source list does not match reduced network")
    if not sources:
        raise EquilibriumError("empty fleet")
    n = net.dim
    finite, pinned = _split(sources)
    m = len(finite)
    f0 = sources[0].f0
    has_inf = bool(pinned)

    V = np.array([s.V0 for s in sources], dtype=float)
    delta = np.zeros(n)
    f_pu = 1.0

    if m == 0:
        u = V * np.exp(1j * delta)
        S = _injection(u, net.Y0)
        return OperatingPoint(
            keep_nodes=net.keep_nodes, V=V, delta=delta,
            f_star=f0, P=S.real.copy(), Q=S.imag.copy(),
        )

    k_f = np.array([sources[i].k_f for i in finite])
    k_v = np.array([sources[i].k_v for i in finite])
    v_set = np.array([sources[i].V0 for i in finite])

    # unknown packing: angles (all finite if anchored, else all but the
    # first), voltages at finite sources, plus f when nothing anchors it
    ang_idx = finite if has_inf else finite[1:]

    def residual(V, delta, f_pu):
        u = V * np.exp(1j * delta)
        S = _injection(u, net.Y0)
        p_droop = (1.0 - f_pu) / k_f
        q_droop = (v_set - V[finite]) / k_v
        return np.concatenate([S.real[finite] - p_droop, S.imag[finite] - q_droop])

    for it in range(NEWTON_MAX_ITER):
        F = residual(V, delta, f_pu)
        err = np.max(np.abs(F))
        if err < NEWTON_TOL:
            break
        u = V * np.exp(1j * delta)
        ds_dva, ds_dvm = _complex_jacobians(u, net.Y0)
        n_ang = len(ang_idx)
        cols = n_ang + m + (0 if has_inf else 1)
        J = np.zeros((2 * m, cols))
        J[:m, :n_ang] = ds_dva.real[np.ix_(finite, ang_idx)]
        J[m:, :n_ang] = ds_dva.imag[np.ix_(finite, ang_idx)]
        J[:m, n_ang:n_ang + m] = ds_dvm.real[np.ix_(finite, finite)]
        J[m:, n_ang:n_ang + m] = ds_dvm.imag[np.ix_(finite, finite)] + np.diag(1.0 / k_v)
        if not has_inf:
            J[:m, -1] = 1.0 / k_f
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as e:
            raise EquilibriumError(f"singular Newton Jacobian at iteration {it}") from e
        delta[ang_idx] += dx[:n_ang]
        V[finite] += dx[n_ang:n_ang + m]
        if not has_inf:
            f_pu += dx[-1]
        if np.any(V <= 0):
            raise EquilibriumError("voltage collapse (non-positive magnitude)")
    else:
        raise EquilibriumError(
            f"no convergence after {NEWTON_MAX_ITER} iterations "
            f"(residual {np.max(np.abs(residual(V, delta, f_pu))):.3e})"
        )

    u = V * np.exp(1j * delta)
    S = _injection(u, net.Y0)
    return OperatingPoint(
        keep_nodes=net.keep_nodes,
        V=V,
        delta=delta,
        f_star=f_pu * f0,
        P=S.real.copy(),
        Q=S.imag.copy(),
    )


def linearize(
    net: ReducedNetwork,
    sources: tuple[SourceParams, ...],
    op: OperatingPoint,
    y1_coupling: bool = True,
) -> StateSpace:
    """Descriptor state-space E dx/dt = A x over the finite-droop fleet.

    States per source: angle deviation, filtered P, filtered Q (block
    ordered).  Infinite buses contribute no states and no voltage
    deviation.
    """
    if len(sources) != net.dim or op.V.shape[0] != net.dim:
        raise AssemblyError("dimension mismatch between fleet, network and op")
    finite, _ = _split(sources)
    m = len(finite)
    if m == 0:
        raise AssemblyError("no finite-droop source to linearize")
    u0 = op.u
    f0 = sources[0].f0
    c = 2 * math.pi * f0

    ds_dva, ds_dvm = _complex_jacobians(u0, net.Y0)
    sel = np.ix_(finite, finite)
    p_d, p_v = ds_dva.real[sel], ds_dvm.real[sel]
    q_d, q_v = ds_dva.imag[sel], ds_dvm.imag[sel]
    if y1_coupling:
        ds_dvad, ds_dvmd = _rate_jacobians(u0, net.Y1)
        p_dd, p_vd = ds_dvad.real[sel], ds_dvmd.real[sel]
        q_dd, q_vd = ds_dvad.imag[sel], ds_dvmd.imag[sel]
    else:
        p_dd = p_vd = q_dd = q_vd = np.zeros((m, m))

    k_f = np.array([sources[i].k_f for i in finite])
    k_v = np.array([sources[i].k_v for i in finite])
    t_c = np.array([sources[i].T_c for i in finite])
    Kf = np.diag(k_f)
    Kv = np.diag(k_v)
    Ti = np.diag(1.0 / t_c)
    I = np.eye(m)
    Z = np.zeros((m, m))

    # rows: d(delta)/dt, d(P_f)/dt, d(Q_f)/dt
    E = np.block([
        [I, Z, Z],
        [-Ti @ p_dd, I, Ti @ p_vd @ Kv],
        [-Ti @ q_dd, Z, I + Ti @ q_vd @ Kv],
    ])
    A = np.block([
        [Z, -c * Kf, Z],
        [Ti @ p_d, -Ti, -Ti @ p_v @ Kv],
        [Ti @ q_d, Z, -Ti @ (I + q_v @ Kv)],
    ])

    nodes = tuple(sources[i].node for i in finite)
    labels = (
        tuple(f"delta:{n}" for n in nodes)
        + tuple(f"p_f:{n}" for n in nodes)
        + tuple(f"q_f:{n}" for n in nodes)
    )
    return StateSpace(
        E=E, A=A, state_labels=labels, finite_nodes=nodes,
        k_f=k_f, k_v=k_v, T_c=t_c, f0=f0, u0=u0, net=net,
    )


def eigenmodes(
    ss: StateSpace,
    zero_tol: float = ZERO_MODE_TOL,
    expected_null: int | None = None,
) -> ModeReport:
    """Generalized eigenvalues of (A, E); the angle-reference null mode is
    excluded before picking the dominant (largest real part) mode."""
    try:
        lam = scipy.linalg.eigvals(ss.A, ss.E)
    except Exception as e:  # scipy raises LinAlgError subclasses
        raise NumericError(f"eigensolver failure: {e}") from e
    lam = lam[np.isfinite(lam)]
    if lam.size == 0:
        raise NumericError("no finite eigenvalues")
    near_zero = np.abs(lam) < zero_tol
    n_discarded = int(np.count_nonzero(near_zero))
    retained = lam[~near_zero]
    warnings: list[str] = []
    if n_discarded > 1:
        warnings.append(f"degenerate model: {n_discarded} near-zero modes")
    if expected_null is not None and n_discarded != expected_null:
        warnings.append(
            f"expected {expected_null} near-zero mode(s), found {n_discarded}"
        )
    if retained.size == 0:
        raise NumericError("all modes fell below the zero tolerance")
    order = np.lexsort((-np.abs(retained.imag), -retained.real))
    retained = retained[order]
    # the dominant mode is the complex pole-pair with the largest real
    # part; purely real modes only take over when unstable (they decide
    # stability) or when no oscillatory pair exists at all
    oscillatory = retained[retained.imag != 0]
    real_modes = retained[retained.imag == 0]
    if oscillatory.size:
        dominant = complex(oscillatory[0])
        if real_modes.size and real_modes[0].real > max(0.0, dominant.real):
            dominant = complex(real_modes[0])
            warnings.append("unstable real mode overrides the dominant pair")
    else:
        dominant = complex(retained[0])
    if dominant.imag < 0:
        dominant = dominant.conjugate()
    zeta = -dominant.real / abs(dominant)
    stable = bool(dominant.real < 0)
    if (zeta > 0) != stable:
        raise NumericError("inconsistent stability classification")
    return ModeReport(
        eigenvalues=tuple(complex(ev) for ev in retained),
        dominant=dominant,
        zeta=float(zeta),
        stable=stable,
        n_discarded=n_discarded,
        warnings=tuple(warnings),
    )


def assess(
    grid: GridGraph,
    sources: tuple[SourceParams, ...],
    vis: tuple[VirtualImpedance, ...] = (),
    y1_coupling: bool = True,
    zero_tol: float = ZERO_MODE_TOL,
) -> ModeReport:
    """Full pipeline: reduce, solve equilibrium, linearize, eigenmodes."""
    _, pinned = _split(sources)
    try:
        net = reduce_network(grid, tuple(s.node for s in sources), vis)
    except Exception as e:
        raise StageError("reduce", e) from e
    try:
        op = droop_powerflow(net, sources)
    except Exception as e:
        raise StageError("powerflow", e) from e
    try:
        ss = linearize(net, sources, op, y1_coupling=y1_coupling)
    except Exception as e:
        raise StageError("linearize", e) from e
    try:
        return eigenmodes(ss, zero_tol=zero_tol, expected_null=0 if pinned else 1)
    except Exception as e:
        raise StageError("eigenmodes", e) from e


def build_statespace(
    grid: GridGraph,
    sources: tuple[SourceParams, ...],
    vis: tuple[VirtualImpedance, ...] = (),
    y1_coupling: bool = True,
) -> StateSpace:
    """Convenience: the assembled StateSpace for time-domain work."""
    net = reduce_network(grid, tuple(s.node for s in sources), vis)
    op = droop_powerflow(net, sources)
    return linearize(net, sources, op, y1_coupling=y1_coupling)
