"""Linear step-response simulation and local damping estimation.

The main studies work in the frequency domain; this module renders the
linearized model in time so an inverter can estimate the grid damping
from its own power measurement, which is the decentralized trigger for
stability storage.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EstimationError, NumericError, StepSizeError, VsgStabError
from .smallsignal import StateSpace, eigenmodes


@dataclass(frozen=True)
class DisturbanceSpec:
    node: str
    dP: float  # pu real-power load step
    t_end: float  # s
    dt: float  # s
    t_step: float = 0.2  # s

    def check(self) -> None:
        if self.dt <= 0:
            raise VsgStabError("dt must be positive")
        if not self.t_step < self.t_end:
            raise VsgStabError("t_step must fall before t_end")
        if abs(self.dP) > 0.05:
            raise VsgStabError("load step beyond the small-signal range (|dP| <= 0.05)")


@dataclass(frozen=True)
class SimTrace:
    time: np.ndarray
    labels: tuple[str, ...]
    data: np.ndarray  # shape (n_samples, n_signals)
    t_step: float

    def signal(self, label: str) -> np.ndarray:
        return self.data[:, self.labels.index(label)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time," + ",".join(self.labels) + "\n")
        for k in range(self.time.size):
            row = ",".join(repr(v) for v in self.data[k])
            buf.write(f"{self.time[k]!r},{row}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class PronyConfig:
    model_order: int = 6  # damped exponentials (complex pairs)
    window: float | None = None  # s after the step; None = to the end
    fit_tolerance: float = 0.05  # max relative misfit of the reconstruction

    def check(self) -> None:
        if self.model_order < 2 or self.model_order % 2:
            raise EstimationError("model_order must be even and >= 2")
        if self.window is not None and self.window <= 0:
            raise EstimationError("window must be positive")


def _input_vector(ss: StateSpace, node: str, u_at_node: complex) -> np.ndarray:
    """Map a unit load step at ``node`` onto the state equations."""
    w = ss.net.injection_transfer(node)
    # unit extra load draws dI = conj(-1 / u) at its bus
    di = np.conj(-1.0 / u_at_node)
    ds = ss.u0 * np.conj(w * di)
    keep = list(ss.net.keep_nodes)
    fin = [keep.index(n) for n in ss.finite_nodes]
    m = len(fin)
    b = np.zeros(3 * m)
    b[m : 2 * m] = ds.real[fin] / ss.T_c
    b[2 * m :] = ds.imag[fin] / ss.T_c
    return b


def rk4_response(
    E: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    t_end: float,
    dt: float,
    t_step: float,
    amplitude: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step RK4 for E dx/dt = A x + b * amplitude * 1(t >= t_step)
    from rest, with E factorized once.

    The state is identically zero before the step, so integration starts
    at the first sample at or after t_step with constant forcing; the
    trajectory stays piecewise smooth and RK4 keeps its full order.
    """
    try:
        lu = scipy.linalg.lu_factor(E)
    except scipy.linalg.LinAlgError as e:
        raise NumericError(f"descriptor matrix not solvable: {e}") from e

    def f(x: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(lu, A @ x + b * amplitude)

    n_steps = int(round(t_end / dt))
    times = np.arange(n_steps + 1) * dt
    xs = np.zeros((n_steps + 1, A.shape[0]))
    x = np.zeros(A.shape[0])
    k0 = int(np.ceil(t_step / dt - 1e-9))
    for k in range(k0, n_steps):
        k1 = f(x)
        k2 = f(x + dt / 2 * k1)
        k3 = f(x + dt / 2 * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[k + 1] = x
    return times, xs


def simulate_step(ss: StateSpace, dist: DisturbanceSpec) -> SimTrace:
    """Render the load-step response of the linearized model.

    dt must resolve the fastest retained mode (dt <= 0.1/|lambda_max|);
    the trace is identically zero before the step and has finite energy
    exactly when the model is stable.
    """
    dist.check()
    report = eigenmodes(ss)
    lam_max = max(abs(ev) for ev in report.eigenvalues)
    if lam_max > 0 and dist.dt > 0.1 / lam_max:
        raise StepSizeError(
            f"dt={dist.dt} too large; fastest retained mode needs dt <= {0.1 / lam_max:.3e}"
        )

    node = dist.node
    if node in ss.net.keep_nodes:
        u_node = ss.u0[list(ss.net.keep_nodes).index(node)]
    else:
        u_node = ss.net.interior_voltages(ss.u0).get(node)
        if u_node is None:
            raise NumericError(f"disturbance node {node} not in the network")
    b = _input_vector(ss, node, u_node)
    times, xs = rk4_response(ss.E, ss.A, b, dist.t_end, dist.dt, dist.t_step, dist.dP)

    m = len(ss.finite_nodes)
    labels = list(ss.state_labels[:m]) + list(ss.state_labels[m : 2 * m])
    data = [xs[:, :m], xs[:, m : 2 * m]]
    # voltage deviation follows the reactive filter through the droop
    labels += [f"v:{n}" for n in ss.finite_nodes]
    data.append(-xs[:, 2 * m :] * ss.k_v)
    return SimTrace(
        time=times,
        labels=tuple(labels),
        data=np.hstack(data),
        t_step=dist.t_step,
    )


def _pick_signal(trace: SimTrace) -> str:
    """Default measurement: the filtered-power signal moving the most."""
    best, best_var = None, -1.0
    mask = trace.time >= trace.t_step
    for lab in trace.labels:
        if not lab.startswith("p_f:"):
            continue
        v = float(np.var(trace.signal(lab)[mask]))
        if v > best_var:
            best, best_var = lab, v
    if best is None:
        raise EstimationError("trace has no filtered-power signal")
    return best


def prony_damping(trace: SimTrace, cfg: PronyConfig, signal: str | None = None) -> float:
    """Damping ratio of the dominant fitted mode of one measured signal.

    Linear-prediction (Prony) fit on the post-step window: the signal is
    first-differenced to reject the step's DC offset, a least-squares
    prediction polynomial is rooted for the discrete poles, and modes
    with negligible amplitude or no oscillatory content are dropped.
    Returns zeta of the surviving mode with the largest growth rate.
    """
    cfg.check()
    label = signal if signal is not None else _pick_signal(trace)
    y_full = trace.signal(label)
    dt = float(trace.time[1] - trace.time[0])
    mask = trace.time >= trace.t_step - 1e-12
    if cfg.window is not None:
        mask &= trace.time <= trace.t_step + cfg.window
    y = y_full[mask]
    p = cfg.model_order
    if y.size < 4 * p:
        raise EstimationError(f"need at least {4 * p} samples after the step")

    d = np.diff(y)
    scale = np.max(np.abs(d))
    if scale == 0:
        raise EstimationError("signal has no post-step content")
    d = d / scale

    n = d.size
    cols = [d[p - 1 - j : n - 1 - j] for j in range(p)]
    M = np.stack(cols, axis=1)
    rhs = d[p:]
    coef, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise EstimationError("ill-conditioned prediction system")
    roots = np.roots(np.concatenate(([1.0], -coef)))

    # amplitudes over the window; drop numerically dead roots first
    roots = roots[np.abs(roots) > 1e-8]
    if roots.size == 0:
        raise EstimationError("no usable modes found")
    k = np.arange(d.size)
    V = np.power.outer(roots, k).T
    amps, _, _, _ = np.linalg.lstsq(V, d.astype(complex), rcond=None)
    resid = np.linalg.norm(V @ amps - d) / np.linalg.norm(d)
    if resid > cfg.fit_tolerance:
        raise EstimationError(f"prediction misfit {resid:.3e} above tolerance")

    lam = np.log(roots.astype(complex)) / dt
    # half a cycle over the window is the slowest resolvable oscillation
    omega_min = np.pi / (dt * d.size)
    keep = (np.abs(amps) > 1e-6 * np.max(np.abs(amps))) & (np.abs(lam.imag) > omega_min)
    if not np.any(keep):
        raise EstimationError("no oscillatory mode above the resolution floor")
    lam = lam[keep]
    dom = lam[np.argmax(lam.real)]
    return float(-dom.real / abs(dom))
