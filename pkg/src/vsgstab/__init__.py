"""Small-signal stability of mixed rotating/virtual-generator grids,
with per-inverter stability metering and adaptive virtual-impedance
stability storage."""

from .allocation import (
    INFINITE_BUS,
    ROTATING,
    VIRTUAL,
    AllocationResult,
    ScenarioConfig,
    SourceParams,
    capacity_shares,
    droop_gains,
    inertia_allocation,
    infinite_bus,
    snsp_of,
)
from .errors import VsgStabError
from .experiments import (
    RunRecord,
    SweepSpec,
    derive_seed,
    heatmap_sweep,
    intervention_study,
    participation_sweep,
    placement_distribution,
    stabilization_study,
)
from .network import (
    ReducedNetwork,
    TheveninAdmittance,
    VirtualImpedance,
    build_ybus,
    dynamic_ybus,
    kron_reduce,
    kron_reduce_pair,
    reduce_network,
    thevenin_at,
)
from .smallsignal import (
    ModeReport,
    OperatingPoint,
    StateSpace,
    assess,
    build_statespace,
    droop_powerflow,
    eigenmodes,
    linearize,
)
from .storage import (
    DsmReport,
    StorageControllerConfig,
    dsm,
    incentive,
    stabilize_all,
    stabilize_local,
)
from .timedomain import (
    DisturbanceSpec,
    PronyConfig,
    SimTrace,
    prony_damping,
    simulate_step,
)
from .topology import (
    Branch,
    GridGraph,
    Node,
    TierSpec,
    candidate_inverter_nodes,
    default_tier_table,
    load_grid,
    save_grid,
    scale_demands,
    synth_topology,
)

__version__ = "0.1.0"
