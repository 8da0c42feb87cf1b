"""Distributed stability metric and the adaptive virtual-impedance loop.

Each inverter can judge its own contribution to grid instability from
purely local quantities: the Thevenin admittance pair (G, B, G', B') of
its connection, its droop gains and its filter cut-off.  The metric is
zero for an inverter at infinite electrical distance and grows as the
coupling tightens.  A participating inverter whose measured damping
falls below the trigger steps up its emulated series inductance until
the metric drops below the target, earning an incentive proportional to
the metric reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .allocation import VIRTUAL, SourceParams
from .errors import ConfigurationError, SingularityError
from .network import (
    TheveninAdmittance,
    VirtualImpedance,
    series_thevenin,
    thevenin_network,
)
from .smallsignal import ModeReport, assess
from .topology import GridGraph

__all__ = [
    "TheveninAdmittance",
    "DsmReport",
    "StorageControllerConfig",
    "dsm",
    "incentive",
    "stabilize_local",
    "stabilize_all",
    "StabilizationResult",
]


@dataclass(frozen=True)
class DsmReport:
    """Per-inverter metering record of one stability-storage engagement."""

    node: str
    dsm: float  # raw metric at the final operating impedance
    L_v: float  # committed inductance, henry
    incentive: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "dsm": self.dsm,
            "L_v_h": self.L_v,
            "incentive": self.incentive,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class StorageControllerConfig:
    damping_trigger: float = 0.0  # act when measured zeta falls below this
    dsm_target: float = 1e-3
    dL: float = 0.2e-3  # henry per step
    L_max: float = 20e-3  # henry
    kappa: float = 1.0

    def check(self) -> None:
        if self.dsm_target <= 0:
            raise ConfigurationError("dsm_target must be positive")
        if self.dL <= 0:
            raise ConfigurationError("dL must be positive")
        if self.L_max < self.dL:
            raise ConfigurationError("L_max must be at least one step dL")
        if self.kappa <= 0:
            raise ConfigurationError("kappa must be positive")


def dsm(th: TheveninAdmittance, k_f: float, k_v: float, omega_c: float) -> float:
    """Distributed stability metric of one inverter.

    Depends only on the local Thevenin admittance and this inverter's
    own controller constants; the voltage-loop denominator 1 - k_v*B
    must stay away from zero.
    """
    g, b, gp, bp = th.G, th.B, th.Gp, th.Bp
    den = 1.0 - k_v * b
    if abs(den) < 1e-12:
        raise SingularityError(f"voltage-loop singularity: 1 - k_v*B = {den:.3e}")
    return (omega_c * k_f / 2.0) * (
        bp
        - 2.0 * k_v * gp * g / den
        + k_v * g * g * (1.0 - omega_c * k_v * bp) / (omega_c * den * den)
    )


def incentive(dsm0: float, dsm_now: float, kappa: float) -> float:
    """Payout proportional to the metric reduction, never negative and
    saturating once the metric itself saturates at zero."""
    if kappa <= 0:
        raise ConfigurationError("kappa must be positive")
    return kappa * max(0.0, max(dsm0, 0.0) - max(dsm_now, 0.0))


def _source_at(sources: tuple[SourceParams, ...], node: str) -> SourceParams:
    for s in sources:
        if s.node == node:
            if s.kind != VIRTUAL:
                raise ConfigurationError(f"{node} hosts a {s.kind} source, not a VSG")
            return s
    raise ConfigurationError(f"no source at node {node}")


def stabilize_local(
    node: str,
    grid: GridGraph,
    sources: tuple[SourceParams, ...],
    cfg: StorageControllerConfig,
    measured_zeta: float,
    other_vis: tuple[VirtualImpedance, ...] = (),
) -> DsmReport:
    """One inverter's stability-storage response.

    Below the damping trigger the inverter walks its emulated inductance
    up in dL steps, re-evaluating its own metric each step, and stops at
    the first grid point under the target or at the cap.  The network
    Thevenin equivalent (including impedances other inverters have
    already committed) is evaluated once; the inverter's own series
    element is folded in analytically per step.
    """
    cfg.check()
    src = _source_at(sources, node)
    omega_c = 1.0 / src.T_c
    y0_net, y1_net = thevenin_network(grid, tuple(s.node for s in sources), node, other_vis)
    zbase = grid.node_zbase(node)
    omega0 = 2 * math.pi * grid.f0

    def metric(lv: float) -> float:
        th = series_thevenin(y0_net, y1_net, 1j * omega0 * lv / zbase, lv / zbase)
        return dsm(th, src.k_f, src.k_v, omega_c)

    dsm0 = metric(0.0)
    if measured_zeta >= cfg.damping_trigger:
        return DsmReport(node=node, dsm=dsm0, L_v=0.0, incentive=0.0, converged=True)

    lv = 0.0
    value = dsm0
    while value >= cfg.dsm_target and lv < cfg.L_max:
        lv = min(lv + cfg.dL, cfg.L_max)
        value = metric(lv)
    return DsmReport(
        node=node,
        dsm=value,
        L_v=lv,
        incentive=incentive(dsm0, value, cfg.kappa),
        converged=bool(value < cfg.dsm_target),
    )


@dataclass(frozen=True)
class StabilizationResult:
    reports: tuple[DsmReport, ...]
    mode_report: ModeReport
    vis: tuple[VirtualImpedance, ...]


def stabilize_all(
    grid: GridGraph,
    sources: tuple[SourceParams, ...],
    participants,
    cfg: StorageControllerConfig,
    initial_vis: tuple[VirtualImpedance, ...] = (),
    y1_coupling: bool = True,
) -> StabilizationResult:
    """Run the storage loop over the participating inverters.

    Participants act in node-id order; each sees the network with the
    impedances committed so far and measures the current global damping
    before deciding.  Non-participants keep zero added impedance.
    """
    vsg_nodes = {s.node for s in sources if s.kind == VIRTUAL}
    participants = sorted(participants)
    unknown = [p for p in participants if p not in vsg_nodes]
    if unknown:
        raise ConfigurationError(f"participants are not VSG nodes: {unknown}")
    committed = list(initial_vis)
    reports = []
    for node in participants:
        zeta_now = assess(grid, sources, tuple(committed), y1_coupling=y1_coupling).zeta
        rep = stabilize_local(
            node, grid, sources, cfg, measured_zeta=zeta_now, other_vis=tuple(committed)
        )
        reports.append(rep)
        if rep.L_v > 0:
            committed.append(VirtualImpedance(node=node, L_v=rep.L_v))
    final = assess(grid, sources, tuple(committed), y1_coupling=y1_coupling)
    return StabilizationResult(
        reports=tuple(reports), mode_report=final, vis=tuple(committed)
    )
