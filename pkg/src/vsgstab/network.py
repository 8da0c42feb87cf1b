"""Admittance matrices in the rotating frame and their Kron reduction.

A branch with physical impedance R + jX at the nominal frequency is a
dynamic phasor element Z(s) = R + (s + j*omega0)*L with L = X/omega0, all
per-unit.  "Static" admittance means Y(s) at s = 0, "dynamic" means
dY/ds at s = 0; the pair (Y0, Y1) over the source nodes is what the
small-signal model consumes.  Virtual impedances are realized as series
elements through an inserted internal node, never by editing matrix
entries in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GridValidationError, ReductionError
from .topology import LOAD, GridGraph

#: Inverter admittances below this magnitude count as electrically infinite
#: distance (isolated terminal).
ISOLATION_TOL = 1e-12


@dataclass(frozen=True)
class VirtualImpedance:
    """Series impedance emulated at an inverter output, physical units."""

    node: str
    L_v: float  # henry
    R_v: float = 0.0  # ohm

    def check(self) -> None:
        if self.L_v < 0 or self.R_v < 0:
            raise GridValidationError(f"virtual impedance at {self.node} must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self.L_v == 0.0 and self.R_v == 0.0


@dataclass(frozen=True)
class TheveninAdmittance:
    """Static (G, B) and dynamic (Gp, Bp) admittance of one inverter's
    Thevenin view of the rest of the grid, per-unit."""

    G: float
    B: float
    Gp: float  # pu * s
    Bp: float  # pu * s

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.G, self.B, self.Gp, self.Bp)


def _branch_y(z_pu: complex, omega0: float, omega: complex) -> tuple[complex, complex]:
    """Static and dynamic admittance of one branch.

    ``omega`` evaluates the static part at a shifted frequency (used by
    differentiation oracles); the dynamic part is always taken at the
    nominal operating point.
    """
    r, x = z_pu.real, z_pu.imag
    el = x / omega0  # per-unit inductance, seconds
    z_eval = r + 1j * omega * el
    if z_eval == 0:
        raise GridValidationError("zero-impedance branch")
    y0 = 1.0 / z_eval
    y1 = -el / (r + 1j * omega0 * el) ** 2
    return y0, y1


def _stamp(Y: np.ndarray, i: int, j: int, y: complex) -> None:
    Y[i, i] += y
    Y[j, j] += y
    Y[i, j] -= y
    Y[j, i] -= y


@lru_cache(maxsize=16)
def _assemble_cached(grid, vis, omega):
    ids, Y0, Y1, terminal = _assemble_impl(grid, vis, omega)
    Y0.setflags(write=False)
    Y1.setflags(write=False)
    return tuple(ids), Y0, Y1, terminal


def _assemble(
    grid: GridGraph,
    vis: tuple[VirtualImpedance, ...] = (),
    omega: complex | None = None,
) -> tuple[list[str], np.ndarray, np.ndarray, dict[str, int]]:
    """Cached full-network assembly; the returned arrays are read-only."""
    return _assemble_cached(grid, tuple(vis), omega)


def _assemble_impl(
    grid: GridGraph,
    vis: tuple[VirtualImpedance, ...] = (),
    omega: complex | None = None,
) -> tuple[list[str], np.ndarray, np.ndarray, dict[str, int]]:
    """Full-network (ids, Y0, Y1, terminal index per VI node).

    Virtual impedances append an internal node ``<node>@vi``; the hosted
    source's terminal moves there while loads stay on the bus.
    """
    omega0 = 2 * math.pi * grid.f0
    if omega is None:
        omega = omega0
    ids = [n.id for n in grid.nodes]
    index = {nid: k for k, nid in enumerate(ids)}
    terminal: dict[str, int] = {}

    live_vis = sorted((v for v in vis if not v.is_zero), key=lambda v: v.node)
    for v in live_vis:
        v.check()
        if v.node not in index:
            raise GridValidationError(f"virtual impedance on unknown node {v.node}")
        terminal[v.node] = len(ids)
        ids.append(f"{v.node}@vi")

    n = len(ids)
    Y0 = np.zeros((n, n), dtype=complex)
    Y1 = np.zeros((n, n), dtype=complex)

    for b in grid.branches:
        y0, y1 = _branch_y(grid.branch_impedance_pu(b), omega0, omega)
        i, j = index[b.from_node], index[b.to_node]
        _stamp(Y0, i, j, y0)
        _stamp(Y1, i, j, y1)

    for k, node in enumerate(grid.nodes):
        if node.kind == LOAD and node.demand != 0:
            # constant-impedance conversion at nominal voltage
            Y0[k, k] += np.conj(node.demand)

    for v in live_vis:
        zbase = grid.node_zbase(v.node)
        z_pu = complex(v.R_v / zbase, omega0 * v.L_v / zbase)
        y0, y1 = _branch_y(z_pu, omega0, omega)
        _stamp(Y0, index[v.node], terminal[v.node], y0)
        _stamp(Y1, index[v.node], terminal[v.node], y1)

    return ids, Y0, Y1, terminal


def build_ybus(grid: GridGraph, omega: complex | None = None) -> tuple[np.ndarray, list[str]]:
    """Bus admittance matrix over all grid nodes plus the node order.

    Branches stamp +y on their diagonals and -y off-diagonal; each load
    adds a shunt conj(S)/|V_nom|^2 on its diagonal.
    """
    ids, Y0, _, _ = _assemble(grid, omega=omega)
    return Y0.copy(), list(ids)


def dynamic_ybus(grid: GridGraph) -> tuple[np.ndarray, list[str]]:
    """dY/ds at the operating frequency; load shunts contribute zero."""
    ids, _, Y1, _ = _assemble(grid)
    return Y1.copy(), list(ids)


def kron_reduce(Y: np.ndarray, keep: list[int]) -> np.ndarray:
    """Schur complement onto the kept indices."""
    n = Y.shape[0]
    keep = list(keep)
    elim = [i for i in range(n) if i not in set(keep)]
    if not elim:
        return Y[np.ix_(keep, keep)].copy()
    Ykk = Y[np.ix_(keep, keep)]
    Yke = Y[np.ix_(keep, elim)]
    Yek = Y[np.ix_(elim, keep)]
    Yee = Y[np.ix_(elim, elim)]
    try:
        W = np.linalg.solve(Yee, Yek)
    except np.linalg.LinAlgError as e:
        raise ReductionError(
            f"eliminated block singular (cond ~ {np.linalg.cond(Yee):.3e})"
        ) from e
    return Ykk - Yke @ W


def kron_reduce_pair(
    Y0: np.ndarray, Y1: np.ndarray, keep: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Reduce Y(s) = Y0 + s*Y1 to the kept nodes, keeping the pair
    consistent: the reduced Y1 is the exact s-derivative of the reduced
    network at s = 0 (product rule through the Schur complement)."""
    n = Y0.shape[0]
    keep = list(keep)
    elim = [i for i in range(n) if i not in set(keep)]
    if not elim:
        return Y0[np.ix_(keep, keep)].copy(), Y1[np.ix_(keep, keep)].copy()
    kk, ke, ek, ee = np.ix_(keep, keep), np.ix_(keep, elim), np.ix_(elim, keep), np.ix_(elim, elim)
    try:
        W = np.linalg.solve(Y0[ee], Y0[ek])  # Yee^-1 Yek
    except np.linalg.LinAlgError as e:
        raise ReductionError(
            f"eliminated block singular (cond ~ {np.linalg.cond(Y0[ee]):.3e})"
        ) from e
    if np.array_equal(Y0, Y0.T):
        V = W.T  # passive network: Yke = Yek^T, Yee symmetric
    else:
        V = np.linalg.solve(Y0[ee].T, Y0[ke].T).T  # Yke Yee^-1
    r0 = Y0[kk] - Y0[ke] @ W
    r1 = Y1[kk] - Y1[ke] @ W - (V @ Y1[ek] - V @ Y1[ee] @ W)
    return r0, r1


@dataclass(frozen=True)
class ReducedNetwork:
    """Source-node admittance pair plus enough of the full network to map
    disturbances at eliminated nodes back onto the kept ones."""

    keep_nodes: tuple[str, ...]  # source bus ids, fleet order
    Y0: np.ndarray
    Y1: np.ndarray
    omega0: float  # rad/s
    full_ids: tuple[str, ...]
    keep_idx: tuple[int, ...]  # terminal index per source in the full matrix
    Y0_full: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.keep_nodes)

    def _elim_idx(self) -> list[int]:
        kept = set(self.keep_idx)
        return [i for i in range(len(self.full_ids)) if i not in kept]

    def injection_transfer(self, node_id: str) -> np.ndarray:
        """Current-distribution vector w over the kept nodes for a unit
        current injected at ``node_id`` of the full network."""
        try:
            pos = self.full_ids.index(node_id)
        except ValueError:
            raise GridValidationError(f"unknown node {node_id}") from None
        if pos in self.keep_idx:
            w = np.zeros(self.dim, dtype=complex)
            w[self.keep_idx.index(pos)] = 1.0
            return w
        elim = self._elim_idx()
        e = np.zeros(len(elim), dtype=complex)
        e[elim.index(pos)] = 1.0
        y = np.linalg.solve(self.Y0_full[np.ix_(elim, elim)], e)
        return self.Y0_full[np.ix_(list(self.keep_idx), elim)] @ y

    def interior_voltages(self, u_keep: np.ndarray) -> dict[str, complex]:
        """Operating voltages at eliminated nodes given the kept ones."""
        elim = self._elim_idx()
        if not elim:
            return {}
        rhs = -self.Y0_full[np.ix_(elim, list(self.keep_idx))] @ u_keep
        u_e = np.linalg.solve(self.Y0_full[np.ix_(elim, elim)], rhs)
        return {self.full_ids[i]: u for i, u in zip(elim, u_e)}


def reduce_network(
    grid: GridGraph,
    source_nodes: list[str] | tuple[str, ...],
    vis: tuple[VirtualImpedance, ...] = (),
) -> ReducedNetwork:
    """Eliminate every node without a source, respecting virtual
    impedances: a source behind a VI keeps its internal terminal node."""
    ids, Y0, Y1, terminal = _assemble(grid, vis=vis)
    index = {nid: k for k, nid in enumerate(ids)}
    keep_idx = []
    for node in source_nodes:
        if node not in index:
            raise GridValidationError(f"source on unknown node {node}")
        keep_idx.append(terminal.get(node, index[node]))
    if len(set(keep_idx)) != len(keep_idx):
        raise GridValidationError("two sources share one terminal node")
    r0, r1 = kron_reduce_pair(Y0, Y1, keep_idx)
    return ReducedNetwork(
        keep_nodes=tuple(source_nodes),
        Y0=r0,
        Y1=r1,
        omega0=2 * math.pi * grid.f0,
        full_ids=tuple(ids),
        keep_idx=tuple(keep_idx),
        Y0_full=Y0,
    )


def thevenin_at(
    grid: GridGraph,
    source_nodes: list[str] | tuple[str, ...],
    node: str,
    vi: VirtualImpedance | None = None,
    other_vis: tuple[VirtualImpedance, ...] = (),
) -> TheveninAdmittance:
    """Thevenin admittance seen by the inverter at ``node``.

    Every other source terminal is grounded (ideal voltage source), the
    rest of the network is reduced onto this bus, and the inverter's own
    virtual impedance is added in series analytically:
    y_th(s) = 1 / (Z_v(s) + Z_net(s)).
    """
    y0_net, y1_net = thevenin_network(grid, source_nodes, node, other_vis)
    zbase = grid.node_zbase(node)
    omega0 = 2 * math.pi * grid.f0
    if vi is None:
        vi = VirtualImpedance(node=node, L_v=0.0)
    vi.check()
    z0_v = complex(vi.R_v / zbase, omega0 * vi.L_v / zbase)
    z1_v = vi.L_v / zbase
    return series_thevenin(y0_net, y1_net, z0_v, z1_v)


def thevenin_network(
    grid: GridGraph,
    source_nodes: list[str] | tuple[str, ...],
    node: str,
    other_vis: tuple[VirtualImpedance, ...] = (),
) -> tuple[complex, complex]:
    """(y_net(0), y_net'(0)) of the grid seen from ``node`` with all other
    source terminals grounded.  Excludes any virtual impedance of the
    inverter at ``node`` itself; committed impedances of other inverters
    belong to the grid and are included."""
    if node not in set(source_nodes):
        raise GridValidationError(f"{node} does not host a source")
    others = tuple(v for v in other_vis if v.node != node)
    ids, Y0, Y1, terminal = _assemble(grid, vis=others)
    index = {nid: k for k, nid in enumerate(ids)}
    grounded = set()
    for s in source_nodes:
        if s == node:
            continue
        grounded.add(terminal.get(s, index[s]))
    alive = [i for i in range(len(ids)) if i not in grounded]
    sub0 = Y0[np.ix_(alive, alive)]
    sub1 = Y1[np.ix_(alive, alive)]
    target = alive.index(index[node])
    r0, r1 = kron_reduce_pair(sub0, sub1, [target])
    return complex(r0[0, 0]), complex(r1[0, 0])


def series_thevenin(
    y0_net: complex, y1_net: complex, z0_v: complex, z1_v: complex
) -> TheveninAdmittance:
    """Combine the grid admittance with a series source impedance."""
    if abs(y0_net) < ISOLATION_TOL:
        return TheveninAdmittance(0.0, 0.0, 0.0, 0.0)
    z0_net = 1.0 / y0_net
    z1_net = -y1_net / (y0_net * y0_net)
    y0 = 1.0 / (z0_v + z0_net)
    y1 = -(z1_v + z1_net) * y0 * y0
    return TheveninAdmittance(y0.real, y0.imag, y1.real, y1.imag)


def dump_matrix(M: np.ndarray) -> str:
    """Debug text dump: one line per entry, ``row col re im``."""
    lines = []
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            lines.append(f"{i} {j} {float(M[i, j].real)!r} {float(M[i, j].imag)!r}")
    return "\n".join(lines) + "\n"
