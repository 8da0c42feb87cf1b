"""Tiered radial distribution networks: model, file format, synthesis.

A grid is a set of substations, junctions and loads joined by tiered
branches.  Distribution branches form one tree per substation; substations
themselves are tied together by backbone branches so the whole graph is a
single electrical island.  Branch impedances derive from a per-tier
density table unless given explicitly.

Grid files are YAML documents with sections ``bases``, ``tiers``,
``nodes`` and ``branches``; all quantities carry their unit in the field
name (``length_km``, ``r_per_km_ohm`` ...).  See ``save_grid`` for the
writer that fixes the canonical field order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import yaml

from .errors import GenerationError, GridSchemaError, GridValidationError

SUBSTATION = "substation"
JUNCTION = "junction"
LOAD = "load"

NODE_KINDS = (SUBSTATION, JUNCTION, LOAD)

#: Default per-tier line data: impedance density rises and X/R falls from
#: trunk to leaf (overhead trunk lines vs resistive distribution cable).
#: The deeper tiers keep a 33 kV base so that desk-scale aggregated loads
#: stay at sane per-unit impedances; real deployments override this table
#: from the grid file.
DEFAULT_TIER_TABLE = (
    # tier, r_per_km [ohm], x_per_km [ohm], voltage_base [V]
    (0, 0.0169, 0.0676, 132_000.0),
    (1, 0.0113, 0.0283, 66_000.0),
    (2, 0.0175, 0.0351, 66_000.0),
    (3, 0.0069, 0.0111, 33_000.0),
    (4, 0.0106, 0.0138, 33_000.0),
    (5, 0.0169, 0.0169, 33_000.0),
    (6, 0.0249, 0.0212, 33_000.0),
    (7, 0.0401, 0.0281, 33_000.0),
)

#: Typical branch length per tier in km, jittered by the generator.
DEFAULT_TIER_LENGTH_KM = (2.0, 1.5, 1.2, 1.0, 0.8, 0.6, 0.4, 0.25)

#: Junction layer growth per tier used by ``synth_topology``: entry t is
#: the branching factor from layer t-1 to layer t (fractional allowed).
DEFAULT_FANOUT = (1.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class TierSpec:
    """Line-impedance density and voltage base of one branch tier."""

    tier: int
    r_per_km: float  # ohm/km
    x_per_km: float  # ohm/km
    voltage_base: float  # volt, line-to-line

    def check(self) -> None:
        if not 0 <= self.tier <= 7:
            raise GridValidationError(f"tier {self.tier} outside 0..7")
        if self.r_per_km <= 0 or self.x_per_km <= 0:
            raise GridValidationError(
                f"tier {self.tier}: impedance densities must be positive"
            )
        if self.voltage_base <= 0:
            raise GridValidationError(f"tier {self.tier}: voltage base must be positive")


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    demand: complex = 0j  # per-unit on the system base, loads only

    def check(self) -> None:
        if self.kind not in NODE_KINDS:
            raise GridValidationError(f"node {self.id}: unknown kind {self.kind!r}")
        if self.kind != LOAD and self.demand != 0:
            raise GridValidationError(f"node {self.id}: only loads may carry demand")
        if self.demand.real < 0:
            raise GridValidationError(f"node {self.id}: negative real demand")


@dataclass(frozen=True)
class Branch:
    from_node: str
    to_node: str
    tier: int
    length: float  # km
    impedance: complex  # ohm at nominal frequency (R + jX)

    def check(self) -> None:
        if self.from_node == self.to_node:
            raise GridValidationError(f"branch {self.from_node}-{self.to_node}: self loop")
        if self.impedance.real <= 0 or self.impedance.imag <= 0:
            raise GridValidationError(
                f"branch {self.from_node}-{self.to_node}: impedance must have Re>0, Im>0"
            )


def branch_impedance(tier_spec: TierSpec, length_km: float) -> complex:
    """Impedance in ohm of a branch from its tier densities and length."""
    return complex(tier_spec.r_per_km * length_km, tier_spec.x_per_km * length_km)


@dataclass(frozen=True)
class GridGraph:
    """Immutable validated network; safe for concurrent read access."""

    nodes: tuple[Node, ...]
    branches: tuple[Branch, ...]
    tier_table: tuple[TierSpec, ...]
    f0: float = 50.0  # Hz
    s_base: float = 1e10  # VA

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def tier_by_index(self) -> dict[int, TierSpec]:
        return {t.tier: t for t in self.tier_table}

    @cached_property
    def substations(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.kind == SUBSTATION)

    @cached_property
    def load_nodes(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.kind == LOAD)

    @cached_property
    def adjacency(self) -> dict[str, tuple[Branch, ...]]:
        adj: dict[str, list[Branch]] = {n.id: [] for n in self.nodes}
        for b in self.branches:
            adj[b.from_node].append(b)
            adj[b.to_node].append(b)
        return {k: tuple(v) for k, v in adj.items()}

    @cached_property
    def subnetwork_of(self) -> dict[str, str]:
        """Map node id -> owning substation id.

        Backbone (substation-substation) branches do not propagate
        ownership; every other node is reached from exactly one
        substation through distribution branches.
        """
        subs = set(self.substations)
        owner: dict[str, str] = {s: s for s in subs}
        for root in self.substations:
            stack = [root]
            while stack:
                cur = stack.pop()
                for b in self.adjacency[cur]:
                    nxt = b.to_node if b.from_node == cur else b.from_node
                    if nxt in subs or nxt in owner:
                        continue
                    owner[nxt] = root
                    stack.append(nxt)
        return owner

    def node(self, node_id: str) -> Node:
        return self.nodes[self.node_index[node_id]]

    def node_voltage_base(self, node_id: str) -> float:
        """Voltage base of a node: that of its lowest incident tier."""
        branches = self.adjacency[node_id]
        if not branches:
            raise GridValidationError(f"node {node_id} has no incident branch")
        tier = min(b.tier for b in branches)
        return self.tier_by_index[tier].voltage_base

    def node_zbase(self, node_id: str) -> float:
        v = self.node_voltage_base(node_id)
        return v * v / self.s_base

    def branch_impedance_pu(self, b: Branch) -> complex:
        spec = self.tier_by_index.get(b.tier)
        if spec is None:
            raise GridValidationError(
                f"branch {b.from_node}-{b.to_node}: tier {b.tier} missing from table"
            )
        zbase = spec.voltage_base**2 / self.s_base
        return b.impedance / zbase

    @cached_property
    def total_demand(self) -> complex:
        return sum((n.demand for n in self.nodes if n.kind == LOAD), 0j)

    def building_counts(self) -> dict[str, int]:
        """Number of load nodes per substation subnetwork."""
        counts = {s: 0 for s in self.substations}
        owner = self.subnetwork_of
        for n in self.nodes:
            if n.kind == LOAD:
                counts[owner[n.id]] += 1
        return counts

    def validate(self) -> "GridGraph":
        """Check every graph invariant; return self for chaining."""
        if not self.nodes:
            raise GridValidationError("grid has no nodes")
        if not self.substations:
            raise GridValidationError("grid has no substation")
        seen: set[str] = set()
        for n in self.nodes:
            n.check()
            if n.id in seen:
                raise GridValidationError(f"duplicate node id {n.id}")
            seen.add(n.id)
        for t in self.tier_table:
            t.check()
        tiers_sorted = sorted(self.tier_table, key=lambda t: t.tier)
        for lo, hi in zip(tiers_sorted, tiers_sorted[1:]):
            if hi.voltage_base > lo.voltage_base:
                raise GridValidationError(
                    f"tier {hi.tier} voltage base exceeds tier {lo.tier}"
                )
        for b in self.branches:
            b.check()
            for end in (b.from_node, b.to_node):
                if end not in self.node_index:
                    raise GridValidationError(
                        f"branch {b.from_node}-{b.to_node}: unknown node {end}"
                    )
            if b.tier not in self.tier_by_index:
                raise GridValidationError(
                    f"branch {b.from_node}-{b.to_node}: tier {b.tier} missing from table"
                )
        if self.f0 <= 0 or self.s_base <= 0:
            raise GridValidationError("bases must be positive")
        self._check_connected()
        self._check_subnetwork_trees()
        return self

    def _check_connected(self) -> None:
        reached = {self.nodes[0].id}
        stack = [self.nodes[0].id]
        while stack:
            cur = stack.pop()
            for b in self.adjacency[cur]:
                nxt = b.to_node if b.from_node == cur else b.from_node
                if nxt not in reached:
                    reached.add(nxt)
                    stack.append(nxt)
        if len(reached) != len(self.nodes):
            missing = sorted(n.id for n in self.nodes if n.id not in reached)
            raise GridValidationError(f"grid not connected; unreachable: {missing[:5]}")

    def _check_subnetwork_trees(self) -> None:
        """Each subnetwork must be a tree hanging off one substation."""
        subs = set(self.substations)
        owner = self.subnetwork_of
        orphans = sorted(n.id for n in self.nodes if n.id not in owner)
        if orphans:
            raise GridValidationError(f"nodes not in any subnetwork: {orphans[:5]}")
        node_count = {s: 1 for s in subs}  # the substation itself
        edge_count = {s: 0 for s in subs}
        for n in self.nodes:
            if n.id not in subs:
                node_count[owner[n.id]] += 1
        for b in self.branches:
            a, c = b.from_node, b.to_node
            if a in subs and c in subs:
                continue  # backbone tie
            sub_a = owner[a]
            sub_c = owner[c]
            if sub_a != sub_c:
                raise GridValidationError(
                    f"branch {a}-{c} crosses subnetworks {sub_a} and {sub_c}"
                )
            edge_count[sub_a] += 1
        for s in subs:
            if edge_count[s] > node_count[s] - 1:
                raise GridValidationError(f"cycle detected in subnetwork {s}")
            if edge_count[s] < node_count[s] - 1:
                raise GridValidationError(f"subnetwork {s} is internally disconnected")


def default_tier_table() -> tuple[TierSpec, ...]:
    return tuple(TierSpec(*row) for row in DEFAULT_TIER_TABLE)


def candidate_inverter_nodes(grid: GridGraph, include_substations: bool = False) -> list[str]:
    """Nodes touching a Tier-1 or Tier-2 branch, sorted by id.

    Substations are excluded by default since they already host the
    equivalent rotating generators.
    """
    hits = set()
    for b in grid.branches:
        if b.tier in (1, 2):
            hits.add(b.from_node)
            hits.add(b.to_node)
    if not include_substations:
        hits -= set(grid.substations)
    return sorted(hits)


def scale_demands(grid: GridGraph, total_demand_pu: float) -> GridGraph:
    """Rescale load demands proportionally to the given per-unit total."""
    current = grid.total_demand.real
    if current <= 0:
        raise GridValidationError("grid carries no load to scale")
    k = total_demand_pu / current
    nodes = tuple(
        replace(n, demand=n.demand * k) if n.kind == LOAD else n for n in grid.nodes
    )
    return replace(grid, nodes=nodes)


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise GridSchemaError(f"{where}: missing field {key!r}")
    return mapping[key]


def _as_complex(value, where: str) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise GridSchemaError(f"{where}: expected [re, im] pair, got {value!r}")


def grid_from_dict(doc: dict) -> GridGraph:
    """Build and validate a GridGraph from the parsed YAML document."""
    if not isinstance(doc, dict):
        raise GridSchemaError("grid document must be a mapping")
    bases = _require(doc, "bases", "document")
    f0 = float(_require(bases, "f0_hz", "bases"))
    s_base = float(_require(bases, "s_base_va", "bases"))

    tier_table = []
    for i, row in enumerate(_require(doc, "tiers", "document")):
        where = f"tiers[{i}]"
        tier_table.append(
            TierSpec(
                tier=int(_require(row, "tier", where)),
                r_per_km=float(_require(row, "r_per_km_ohm", where)),
                x_per_km=float(_require(row, "x_per_km_ohm", where)),
                voltage_base=float(_require(row, "voltage_base_v", where)),
            )
        )
    tiers = {t.tier: t for t in tier_table}

    nodes = []
    for i, row in enumerate(_require(doc, "nodes", "document")):
        where = f"nodes[{i}]"
        kind = str(_require(row, "kind", where))
        demand = 0j
        if "demand_pu" in row:
            demand = _as_complex(row["demand_pu"], where)
        nodes.append(Node(id=str(_require(row, "id", where)), kind=kind, demand=demand))

    branches = []
    for i, row in enumerate(_require(doc, "branches", "document")):
        where = f"branches[{i}]"
        tier = int(_require(row, "tier", where))
        length = float(_require(row, "length_km", where))
        if "impedance_ohm" in row:
            # explicit impedance overrides the tier-density product
            z = _as_complex(row["impedance_ohm"], where)
        else:
            if tier not in tiers:
                raise GridSchemaError(f"{where}: tier {tier} not in tier table")
            z = branch_impedance(tiers[tier], length)
        branches.append(
            Branch(
                from_node=str(_require(row, "from", where)),
                to_node=str(_require(row, "to", where)),
                tier=tier,
                length=length,
                impedance=z,
            )
        )

    grid = GridGraph(
        nodes=tuple(nodes),
        branches=tuple(branches),
        tier_table=tuple(tier_table),
        f0=f0,
        s_base=s_base,
    )
    return grid.validate()


def grid_to_dict(grid: GridGraph) -> dict:
    """Canonical document form of a grid (fixed key order, full precision)."""
    doc: dict = {
        "bases": {"f0_hz": grid.f0, "s_base_va": grid.s_base},
        "tiers": [
            {
                "tier": t.tier,
                "r_per_km_ohm": t.r_per_km,
                "x_per_km_ohm": t.x_per_km,
                "voltage_base_v": t.voltage_base,
            }
            for t in sorted(grid.tier_table, key=lambda t: t.tier)
        ],
        "nodes": [],
        "branches": [],
    }
    for n in grid.nodes:
        row: dict = {"id": n.id, "kind": n.kind}
        if n.kind == LOAD:
            row["demand_pu"] = [n.demand.real, n.demand.imag]
        doc["nodes"].append(row)
    for b in grid.branches:
        doc["branches"].append(
            {
                "from": b.from_node,
                "to": b.to_node,
                "tier": b.tier,
                "length_km": b.length,
                "impedance_ohm": [b.impedance.real, b.impedance.imag],
            }
        )
    return doc


def load_grid(path) -> GridGraph:
    """Parse and validate a grid file.

    Raises GridSchemaError on malformed documents (with the offending
    field) and GridValidationError on graph-invariant violations.
    """
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise GridSchemaError(f"{path}: {e}") from e
    return grid_from_dict(doc)


def save_grid(grid: GridGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_grid(grid))


def dump_grid(grid: GridGraph) -> str:
    """Serialize deterministically; same grid -> same bytes."""
    return yaml.safe_dump(grid_to_dict(grid), sort_keys=False, width=100)


# ---------------------------------------------------------------------------
# Synthetic topology
# ---------------------------------------------------------------------------


def synth_topology(
    seed: int,
    n_substations: int = 9,
    n_loads: int = 120,
    tier_table: tuple[TierSpec, ...] | None = None,
    fanout_profile: tuple[float, ...] = DEFAULT_FANOUT,
    loading_factor: float = 0.8,
    power_factor: float = 0.95,
    tier_length_km: tuple[float, ...] = DEFAULT_TIER_LENGTH_KM,
    backbone_length_km: float = 1.0,
    f0: float = 50.0,
    s_base: float = 1e10,
) -> GridGraph:
    """Generate a seeded tiered radial grid.

    Each substation roots a tree of junction layers whose branch tiers
    strictly increase with depth; loads hang off the deepest layer via
    tier-7 branches, drawing equal demand that sums to
    ``loading_factor`` per-unit.  A tier-0 backbone chain ties the
    substations into one island.  Deterministic for a fixed seed.
    """
    if n_substations < 1:
        raise GenerationError("need at least one substation")
    if n_loads < n_substations:
        raise GenerationError("need at least one load per substation")
    if len(fanout_profile) != 7:
        raise GenerationError("fanout profile must give factors for tiers 0..6")
    if any(f <= 0 for f in fanout_profile):
        raise GenerationError("fanout factors must be positive")
    tiers = tuple(tier_table) if tier_table is not None else default_tier_table()
    tier_map = {t.tier: t for t in tiers}
    for t in range(8):
        if t not in tier_map:
            raise GenerationError(f"tier table missing tier {t}")

    rng = np.random.default_rng(seed)
    width = max(2, len(str(n_loads)))

    def jitter(base: float) -> float:
        return float(base * rng.uniform(0.7, 1.3))

    nodes: list[Node] = []
    branches: list[Branch] = []
    sub_ids = [f"s{i}" for i in range(n_substations)]
    for sid in sub_ids:
        nodes.append(Node(id=sid, kind=SUBSTATION))

    # backbone chain among substations (tier 0)
    for a, b in zip(sub_ids, sub_ids[1:]):
        length = jitter(backbone_length_km)
        branches.append(
            Branch(a, b, tier=0, length=length, impedance=branch_impedance(tier_map[0], length))
        )

    # loads per substation: as even as possible, remainder to the first few
    per_sub = [n_loads // n_substations] * n_substations
    for i in range(n_loads % n_substations):
        per_sub[i] += 1

    p_each = loading_factor / n_loads
    q_each = p_each * math.tan(math.acos(power_factor))
    demand = complex(p_each, q_each)

    for s_idx, sid in enumerate(sub_ids):
        # junction layers; layer t reached through tier-t branches
        sizes = []
        prev = 1.0
        for f in fanout_profile:
            prev = max(1, round(prev * f))
            sizes.append(int(prev))
        layers: list[list[str]] = []
        parent_layer = [sid]
        j_count = 0
        for t, size in enumerate(sizes):
            layer = []
            for _ in range(size):
                jid = f"{sid}-j{j_count:0{width}d}"
                j_count += 1
                parent = parent_layer[int(rng.integers(len(parent_layer)))]
                length = jitter(tier_length_km[t])
                branches.append(
                    Branch(
                        parent,
                        jid,
                        tier=t,
                        length=length,
                        impedance=branch_impedance(tier_map[t], length),
                    )
                )
                layer.append(jid)
                nodes.append(Node(id=jid, kind=JUNCTION))
            layers.append(layer)
            parent_layer = layer

        deepest = layers[-1]
        for l_idx in range(per_sub[s_idx]):
            lid = f"{sid}-l{l_idx:0{width}d}"
            parent = deepest[int(rng.integers(len(deepest)))]
            length = jitter(tier_length_km[7])
            branches.append(
                Branch(
                    parent,
                    lid,
                    tier=7,
                    length=length,
                    impedance=branch_impedance(tier_map[7], length),
                )
            )
            nodes.append(Node(id=lid, kind=LOAD, demand=demand))

    nodes.sort(key=lambda n: n.id)
    branches.sort(key=lambda b: (b.from_node, b.to_node))
    grid = GridGraph(
        nodes=tuple(nodes),
        branches=tuple(branches),
        tier_table=tiers,
        f0=f0,
        s_base=s_base,
    )
    try:
        return grid.validate()
    except GridValidationError as e:
        raise GenerationError(f"generated grid failed validation: {e}") from e
