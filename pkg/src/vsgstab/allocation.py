"""Turn a scenario (SNSP, inverter count, system inertia) into a fleet.

Synchronous machines sit at the substations with capacities proportional
to the number of buildings in their subnetwork; inverters are equal-
capacity and drawn from a placement pool without replacement.  Every
source then receives inertia proportional to its capacity and droop
gains from that inertia, so rotating and virtual machines share one
dynamic model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllocationError, ConfigurationError, PlacementError
from .topology import GridGraph, candidate_inverter_nodes

ROTATING = "rotating"
VIRTUAL = "virtual"
INFINITE_BUS = "infinite_bus"

#: Power-measurement filter time constant for a 2 Hz cut-off.
DEFAULT_T_C = 1.0 / (4.0 * math.pi)
DEFAULT_R0 = 3.0


@dataclass(frozen=True)
class SourceParams:
    """One generator: capacity, inertia and droop gains, all per-unit."""

    node: str
    kind: str
    S: float  # capacity, pu on the system base
    H: float  # inertia constant, s
    k_f: float  # frequency droop, pu-Hz per pu-W
    k_v: float  # voltage droop, pu-V per pu-VAR
    T_c: float  # power filter time constant, s
    f0: float = 50.0
    V0: float = 1.0

    @property
    def D(self) -> float:
        """Damping factor in the machine analogy (1/k_f)."""
        return math.inf if self.k_f == 0 else 1.0 / self.k_f

    def check(self) -> None:
        if self.kind == INFINITE_BUS:
            if self.k_f != 0 or self.k_v != 0:
                raise AllocationError(f"{self.node}: infinite bus must have zero droop")
            return
        if self.S <= 0:
            raise AllocationError(f"{self.node}: capacity must be positive")
        if self.H <= 0 or self.k_f <= 0 or self.k_v <= 0 or self.T_c <= 0:
            raise AllocationError(f"{self.node}: H, k_f, k_v, T_c must be positive")
        if not math.isclose(self.H, self.T_c / (2 * self.k_f), rel_tol=1e-9):
            raise AllocationError(f"{self.node}: H inconsistent with T_c/(2 k_f)")


def infinite_bus(node: str, f0: float = 50.0, V0: float = 1.0) -> SourceParams:
    return SourceParams(
        node=node, kind=INFINITE_BUS, S=0.0, H=math.inf, k_f=0.0, k_v=0.0,
        T_c=DEFAULT_T_C, f0=f0, V0=V0,
    )


@dataclass(frozen=True)
class ScenarioConfig:
    snsp: float
    n_inv: int
    h_total: float = 4.0  # s
    s_total: float = 1.0  # pu
    s_demand: float | None = None  # pu; None keeps the grid's own loading
    r0: float = DEFAULT_R0
    t_c: float = DEFAULT_T_C
    rng_seed: int = 0
    placement_pool: tuple[str, ...] | None = None

    def check(self) -> None:
        if not 0.0 <= self.snsp <= 1.0:
            raise ConfigurationError(f"snsp {self.snsp} outside [0, 1]")
        if self.n_inv < 0:
            raise ConfigurationError("n_inv must be >= 0")
        if self.h_total <= 0 or self.s_total <= 0:
            raise ConfigurationError("h_total and s_total must be positive")
        if self.r0 <= 0 or self.t_c <= 0:
            raise ConfigurationError("r0 and t_c must be positive")
        if 0.0 < self.snsp < 1.0 and self.n_inv == 0:
            raise ConfigurationError("snsp in (0,1) requires at least one inverter")


@dataclass(frozen=True)
class AllocationResult:
    sources: tuple[SourceParams, ...]
    beta: dict[str, float]  # substation id -> share
    achieved_snsp: float
    inverter_nodes: tuple[str, ...] = field(default=())


def inertia_allocation(capacities, h_total: float) -> np.ndarray:
    """Inertia constants proportional to capacity at the required total.

    Solves the capacity-weighted sharing system whose closed form is
    H_i = S_i * S_total * H_total / sum(S_j^2); the weighted mean
    sum(H_i S_i)/S_total then equals h_total.
    """
    s = np.asarray(capacities, dtype=float)
    if s.size == 0:
        raise AllocationError("no capacities to allocate inertia over")
    if np.any(s <= 0):
        raise AllocationError("inertia allocation needs strictly positive capacities")
    if h_total <= 0:
        raise AllocationError("h_total must be positive")
    s_total = s.sum()
    return s * (s_total * h_total / np.dot(s, s))


def droop_gains(h_i: float, t_c: float, r0: float) -> tuple[float, float]:
    """Frequency and voltage droop gains from one source's inertia."""
    if h_i <= 0 or t_c <= 0:
        raise AllocationError("droop gains need positive inertia and filter constant")
    k_f = t_c / (2.0 * h_i)
    return k_f, r0 * k_f


def snsp_of(sources) -> float:
    """Share of capacity supplied by inverter-based sources."""
    s_inv = sum(s.S for s in sources if s.kind == VIRTUAL)
    s_all = sum(s.S for s in sources if s.kind != INFINITE_BUS)
    if s_all == 0:
        raise AllocationError("fleet has no finite-capacity source")
    return s_inv / s_all


def capacity_shares(grid: GridGraph, cfg: ScenarioConfig) -> AllocationResult:
    """Build the fleet for a scenario.

    Rotating capacity splits over substations by building count and is
    scaled by (1 - SNSP); inverters get equal shares of the SNSP part at
    nodes drawn without replacement from the placement pool.  The SNSP
    endpoints remove the absent class entirely.
    """
    cfg.check()
    counts = grid.building_counts()
    total = sum(counts.values())
    if total == 0:
        raise ConfigurationError("grid has no load nodes to derive capacity shares")
    beta = {s: counts[s] / total for s in grid.substations}

    n_inv = cfg.n_inv if cfg.snsp > 0 else 0
    entries: list[tuple[str, str, float]] = []
    if cfg.snsp < 1.0:
        for sub in grid.substations:
            s_i = beta[sub] * cfg.s_total * (1.0 - cfg.snsp)
            if s_i > 0:
                entries.append((sub, ROTATING, s_i))
    inv_nodes: tuple[str, ...] = ()
    if n_inv > 0:
        pool = cfg.placement_pool
        if pool is None:
            pool = tuple(candidate_inverter_nodes(grid))
        if n_inv > len(pool):
            raise PlacementError(
                f"cannot place {n_inv} inverters on {len(pool)} candidate nodes"
            )
        rng = np.random.default_rng(cfg.rng_seed)
        picks = rng.choice(len(pool), size=n_inv, replace=False)
        inv_nodes = tuple(sorted(pool[i] for i in picks))
        s_j = cfg.s_total * cfg.snsp / n_inv
        for node in inv_nodes:
            entries.append((node, VIRTUAL, s_j))

    if not entries:
        raise ConfigurationError("scenario produced an empty fleet")

    caps = np.array([e[2] for e in entries])
    h = inertia_allocation(caps, cfg.h_total)
    sources = []
    for (node, kind, s_i), h_i in zip(entries, h):
        k_f, k_v = droop_gains(float(h_i), cfg.t_c, cfg.r0)
        sources.append(
            SourceParams(
                node=node, kind=kind, S=s_i, H=float(h_i),
                k_f=k_f, k_v=k_v, T_c=cfg.t_c, f0=grid.f0,
            )
        )
    for s in sources:
        s.check()

    result = AllocationResult(
        sources=tuple(sources),
        beta=beta,
        achieved_snsp=snsp_of(sources),
        inverter_nodes=inv_nodes,
    )
    if abs(result.achieved_snsp - cfg.snsp) > 1e-9:
        raise AllocationError(
            f"achieved SNSP {result.achieved_snsp} deviates from {cfg.snsp}"
        )
    return result
