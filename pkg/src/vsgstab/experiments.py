"""Seeded Monte Carlo studies: heatmaps, placement distributions,
interventions, participation sweeps and stabilization case studies.

Every trial's seed derives from (base_seed, coordinates) through a
documented pure function, so any cell or record can be recomputed in
isolation and the merged output never depends on execution order.
Trial failures are recorded, not raised.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .allocation import ScenarioConfig, SourceParams, capacity_shares, infinite_bus
from .errors import ConfigurationError, VsgStabError
from .network import VirtualImpedance
from .smallsignal import ModeReport, assess
from .storage import DsmReport, StabilizationResult, StorageControllerConfig, stabilize_all
from .topology import GridGraph, scale_demands


def derive_seed(base_seed: int, *coords: int) -> int:
    """Pure seed derivation: spawn a SeedSequence from the base entropy
    and the integer coordinates; identical inputs give identical seeds."""
    ss = np.random.SeedSequence([int(base_seed), *[int(c) for c in coords]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SweepSpec:
    snsp_grid: tuple[float, ...]
    n_inv_grid: tuple[int, ...]
    h_grid: tuple[float, ...] = (4.0,)
    n_trials: int = 100
    base_seed: int = 0
    participation: float = 1.0
    L_v_options: tuple[float, ...] = (0.2e-3, 2e-3, 20e-3)
    s_total: float = 1.0
    s_demand: float | None = None
    t_c: float | None = None
    r0: float = 3.0

    def check(self) -> None:
        if self.n_trials < 1:
            raise ConfigurationError("n_trials must be >= 1")
        if not self.snsp_grid or not self.n_inv_grid or not self.h_grid:
            raise ConfigurationError("sweep grids must be nonempty")
        if not 0.0 <= self.participation <= 1.0:
            raise ConfigurationError("participation must lie in [0, 1]")


@dataclass(frozen=True)
class RunRecord:
    snsp: float
    n_inv: int
    h_total: float
    trial: int
    seed: int
    zeta_before: float | None = None
    zeta_after: float | None = None
    dsm_reports: tuple[DsmReport, ...] = ()
    error: str | None = None
    wall_time: float = 0.0

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        # wall_time stays off the record on purpose: serialized output is
        # bit-reproducible from (coordinates, seed)
        out: dict = {
            "snsp": self.snsp,
            "n_inv": self.n_inv,
            "h_total": self.h_total,
            "trial": self.trial,
            "seed": self.seed,
        }
        if self.zeta_before is not None:
            out["zeta_before"] = self.zeta_before
        if self.zeta_after is not None:
            out["zeta_after"] = self.zeta_after
        if self.dsm_reports:
            out["dsm_reports"] = [r.to_dict() for r in self.dsm_reports]
        if self.error is not None:
            out["error"] = self.error
        return out


def _scenario(grid: GridGraph, spec_like, snsp: float, n_inv: int, h_total: float, seed: int) -> ScenarioConfig:
    kwargs = {}
    if spec_like is not None:
        if spec_like.t_c is not None:
            kwargs["t_c"] = spec_like.t_c
        kwargs["r0"] = spec_like.r0
        kwargs["s_total"] = spec_like.s_total
        kwargs["s_demand"] = spec_like.s_demand
    return ScenarioConfig(snsp=snsp, n_inv=n_inv, h_total=h_total, rng_seed=seed, **kwargs)


def scenario_grid(grid: GridGraph, cfg: ScenarioConfig) -> GridGraph:
    if cfg.s_demand is None:
        return grid
    return scale_demands(grid, cfg.s_demand)


def run_trial(
    grid: GridGraph,
    snsp: float,
    n_inv: int,
    h_total: float,
    trial: int,
    seed: int,
    spec: SweepSpec | None = None,
) -> RunRecord:
    """Assess one seeded random placement; failures land in the record."""
    t0 = time.perf_counter()
    try:
        cfg = _scenario(grid, spec, snsp, n_inv, h_total, seed)
        g = scenario_grid(grid, cfg)
        alloc = capacity_shares(g, cfg)
        report = assess(g, alloc.sources)
        return RunRecord(
            snsp=snsp, n_inv=n_inv, h_total=h_total, trial=trial, seed=seed,
            zeta_before=report.zeta, wall_time=time.perf_counter() - t0,
        )
    except VsgStabError as e:
        return RunRecord(
            snsp=snsp, n_inv=n_inv, h_total=h_total, trial=trial, seed=seed,
            error=str(e), wall_time=time.perf_counter() - t0,
        )


def _trial_star(args):
    return run_trial(*args)


def _run_all(tasks, jobs: int):
    if jobs <= 1 or len(tasks) < 2:
        return [_trial_star(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_star, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


@dataclass(frozen=True)
class HeatmapCell:
    snsp: float
    n_inv: int
    h_total: float
    mean_zeta: float | None
    n_trials: int
    n_failed: int
    flagged: bool  # more than 10% of trials failed


@dataclass(frozen=True)
class SweepResult:
    records: tuple[RunRecord, ...]
    cells: tuple[HeatmapCell, ...] = ()


def heatmap_sweep(grid: GridGraph, spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """Mean damping ratio per (h_total, snsp, n_inv) cell.

    Cell trials are seeded from (base_seed, h-index, snsp-index,
    n-index, trial); the SNSP endpoints drop the absent source class via
    the allocator.
    """
    spec.check()
    tasks = []
    for hi, h in enumerate(spec.h_grid):
        for si, snsp in enumerate(spec.snsp_grid):
            for ni, n_inv in enumerate(spec.n_inv_grid):
                for trial in range(spec.n_trials):
                    seed = derive_seed(spec.base_seed, hi, si, ni, trial)
                    tasks.append((grid, snsp, n_inv, h, trial, seed, spec))
    records = _run_all(tasks, jobs)

    cells = []
    k = 0
    for h in spec.h_grid:
        for snsp in spec.snsp_grid:
            for n_inv in spec.n_inv_grid:
                chunk = records[k : k + spec.n_trials]
                k += spec.n_trials
                zs = [r.zeta_before for r in chunk if not r.failed]
                n_failed = sum(1 for r in chunk if r.failed)
                cells.append(
                    HeatmapCell(
                        snsp=snsp,
                        n_inv=n_inv,
                        h_total=h,
                        mean_zeta=float(np.mean(zs)) if zs else None,
                        n_trials=spec.n_trials,
                        n_failed=n_failed,
                        flagged=n_failed > 0.1 * spec.n_trials,
                    )
                )
    return SweepResult(records=tuple(records), cells=tuple(cells))


@dataclass(frozen=True)
class DistributionResult:
    records: tuple[RunRecord, ...]
    samples: tuple[float, ...]
    quartiles: tuple[float, float, float]  # 25th, median, 75th
    n_failed: int


def placement_distribution(
    grid: GridGraph,
    snsp: float,
    n_inv: int,
    h_total: float,
    n_trials: int,
    base_seed: int = 0,
    spec: SweepSpec | None = None,
    jobs: int = 1,
) -> DistributionResult:
    """Damping-ratio sample set over seeded placements at one scenario."""
    tasks = [
        (grid, snsp, n_inv, h_total, trial, derive_seed(base_seed, trial), spec)
        for trial in range(n_trials)
    ]
    records = _run_all(tasks, jobs)
    zs = [r.zeta_before for r in records if not r.failed]
    if not zs:
        raise VsgStabError("all placement trials failed")
    q25, q50, q75 = np.percentile(zs, [25, 50, 75])
    return DistributionResult(
        records=tuple(records),
        samples=tuple(zs),
        quartiles=(float(q25), float(q50), float(q75)),
        n_failed=sum(1 for r in records if r.failed),
    )


def intervention_study(
    grid: GridGraph,
    sources: tuple[SourceParams, ...],
    node: str,
) -> tuple[ModeReport, ModeReport]:
    """Damping before and after an infinite-inertia source joins at ``node``."""
    before = assess(grid, sources)
    joined = sources + (infinite_bus(node, f0=grid.f0),)
    after = assess(grid, joined)
    return before, after


def _participation_trial(args):
    (grid, snsp, n_inv, h_total, trial, seed, spec, fractions, lv_options) = args
    t0 = time.perf_counter()
    out = []
    try:
        cfg = _scenario(grid, spec, snsp, n_inv, h_total, seed)
        g = scenario_grid(grid, cfg)
        alloc = capacity_shares(g, cfg)
        before = assess(g, alloc.sources).zeta
        # one permutation per trial: larger fractions take supersets
        order = np.random.default_rng(derive_seed(seed, 1)).permutation(len(alloc.inverter_nodes))
        for f in fractions:
            n_part = int(round(f * len(alloc.inverter_nodes)))
            part = sorted(alloc.inverter_nodes[i] for i in order[:n_part])
            for lv in lv_options:
                vis = tuple(VirtualImpedance(node=p, L_v=lv) for p in part)
                after = assess(g, alloc.sources, vis).zeta
                out.append(
                    dict(
                        snsp=snsp, n_inv=n_inv, h_total=h_total, trial=trial,
                        seed=seed, fraction=f, L_v_h=lv,
                        zeta_before=before, zeta_after=after,
                    )
                )
        return out
    except VsgStabError as e:
        return [
            dict(
                snsp=snsp, n_inv=n_inv, h_total=h_total, trial=trial, seed=seed,
                fraction=None, L_v_h=None, error=str(e),
            )
        ]


def participation_sweep(
    grid: GridGraph,
    snsp: float,
    n_inv: int,
    h_total: float,
    fractions,
    lv_options,
    n_trials: int,
    base_seed: int = 0,
    spec: SweepSpec | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Uniform-contribution storage sweep (fixed L_v per participant).

    Participant subsets nest across fractions within one trial so the
    participation ordering is comparable seed by seed.
    """
    fractions = tuple(fractions)
    lv_options = tuple(lv_options)
    tasks = [
        (grid, snsp, n_inv, h_total, trial, derive_seed(base_seed, trial), spec, fractions, lv_options)
        for trial in range(n_trials)
    ]
    if jobs <= 1 or len(tasks) < 2:
        nested = [_participation_trial(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            nested = list(pool.map(_participation_trial, tasks))
    return [row for sub in nested for row in sub]


@dataclass(frozen=True)
class StabilizationStudy:
    before: ModeReport
    after: ModeReport
    reports: tuple[DsmReport, ...]
    vis: tuple[VirtualImpedance, ...]


def stabilization_study(
    grid: GridGraph,
    sources: tuple[SourceParams, ...],
    participants,
    cfg: StorageControllerConfig | None = None,
) -> StabilizationStudy:
    """assess -> stabilize_all -> assess with the per-inverter breakdown."""
    cfg = cfg or StorageControllerConfig()
    before = assess(grid, sources)
    result: StabilizationResult = stabilize_all(grid, sources, participants, cfg)
    return StabilizationStudy(
        before=before,
        after=result.mode_report,
        reports=result.reports,
        vis=result.vis,
    )
