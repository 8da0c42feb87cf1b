"""Grid model, file schema and synthetic generator."""

from __future__ import annotations

import pytest

from vsgstab.errors import GenerationError, GridSchemaError, GridValidationError
from vsgstab.topology import (
    candidate_inverter_nodes,
    default_tier_table,
    dump_grid,
    grid_from_dict,
    load_grid,
    save_grid,
    scale_demands,
    synth_topology,
)

MINIMAL_GRID = """\
bases:
  f0_hz: 50.0
  s_base_va: 1.0e10
tiers:
  - {tier: 7, r_per_km_ohm: 0.04, x_per_km_ohm: 0.028, voltage_base_v: 33000.0}
nodes:
  - {id: s0, kind: substation}
  - {id: l0, kind: load, demand_pu: [0.01, 0.002]}
branches:
  - {from: s0, to: l0, tier: 7, length_km: 0.5}
"""


def test_minimal_two_node_file(tmp_path):
    path = tmp_path / "mini.yaml"
    path.write_text(MINIMAL_GRID)
    grid = load_grid(path)
    assert len(grid.nodes) == 2
    assert len(grid.branches) == 1
    b = grid.branches[0]
    assert b.impedance == pytest.approx(complex(0.04 * 0.5, 0.028 * 0.5))
    assert grid.node("l0").demand == 0.01 + 0.002j


def test_cycle_detected(tmp_path):
    doc = MINIMAL_GRID + """\
  - {from: s0, to: j1, tier: 7, length_km: 0.5}
  - {from: j1, to: l0, tier: 7, length_km: 0.5}
"""
    doc = doc.replace(
        "  - {id: l0",
        "  - {id: j1, kind: junction}\n  - {id: l0",
    )
    path = tmp_path / "cycle.yaml"
    path.write_text(doc)
    with pytest.raises(GridValidationError, match="cycle detected"):
        load_grid(path)


def test_explicit_impedance_overrides_tier(tmp_path):
    doc = MINIMAL_GRID.replace(
        "length_km: 0.5}",
        "length_km: 0.5, impedance_ohm: [0.123, 0.456]}",
    )
    path = tmp_path / "explicit.yaml"
    path.write_text(doc)
    grid = load_grid(path)
    assert grid.branches[0].impedance == 0.123 + 0.456j


def test_schema_error_names_missing_field(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text(MINIMAL_GRID.replace("tier: 7, r_per_km_ohm", "tier: 7, r_km"))
    with pytest.raises(GridSchemaError, match="r_per_km_ohm"):
        load_grid(path)


def test_validation_rejects_rising_voltage_base():
    doc = {
        "bases": {"f0_hz": 50.0, "s_base_va": 1e10},
        "tiers": [
            {"tier": 0, "r_per_km_ohm": 0.01, "x_per_km_ohm": 0.05, "voltage_base_v": 33e3},
            {"tier": 1, "r_per_km_ohm": 0.01, "x_per_km_ohm": 0.05, "voltage_base_v": 66e3},
        ],
        "nodes": [
            {"id": "s0", "kind": "substation"},
            {"id": "l0", "kind": "load", "demand_pu": [0.1, 0.0]},
        ],
        "branches": [{"from": "s0", "to": "l0", "tier": 0, "length_km": 1.0}],
    }
    with pytest.raises(GridValidationError, match="voltage base"):
        grid_from_dict(doc)


def test_demand_on_non_load_rejected():
    doc = {
        "bases": {"f0_hz": 50.0, "s_base_va": 1e10},
        "tiers": [
            {"tier": 7, "r_per_km_ohm": 0.04, "x_per_km_ohm": 0.028, "voltage_base_v": 33e3}
        ],
        "nodes": [
            {"id": "s0", "kind": "substation", "demand_pu": [0.1, 0.0]},
            {"id": "l0", "kind": "load", "demand_pu": [0.1, 0.0]},
        ],
        "branches": [{"from": "s0", "to": "l0", "tier": 7, "length_km": 1.0}],
    }
    with pytest.raises(GridValidationError, match="only loads"):
        grid_from_dict(doc)


def test_synth_small_structure():
    grid = synth_topology(seed=1, n_substations=1, n_loads=4)
    assert len(grid.substations) == 1
    assert len(grid.load_nodes) == 4
    # validated by construction; all loads in the single subnetwork
    assert set(grid.subnetwork_of.values()) == {"s0"}


def test_synth_deterministic():
    a = synth_topology(seed=1, n_substations=2, n_loads=10)
    b = synth_topology(seed=1, n_substations=2, n_loads=10)
    assert dump_grid(a) == dump_grid(b)
    c = synth_topology(seed=2, n_substations=2, n_loads=10)
    assert dump_grid(a) != dump_grid(c)


def test_synth_nine_substations_invariants():
    grid = synth_topology(seed=1, n_substations=9, n_loads=200)
    assert len(grid.substations) == 9
    assert len(grid.load_nodes) == 200
    grid.validate()
    # tree property per subnetwork: distribution branches = members - 1
    owner = grid.subnetwork_of
    subs = set(grid.substations)
    members = {s: 1 for s in subs}
    edges = {s: 0 for s in subs}
    for n in grid.nodes:
        if n.id not in subs:
            members[owner[n.id]] += 1
    for b in grid.branches:
        if b.from_node in subs and b.to_node in subs:
            continue
        edges[owner[b.from_node]] += 1
    for s in subs:
        assert edges[s] == members[s] - 1


def test_synth_tiers_increase_along_paths():
    grid = synth_topology(seed=5, n_substations=2, n_loads=12)
    subs = set(grid.substations)
    # walk from each substation down its tree, tracking branch tiers
    adj = grid.adjacency
    for root in subs:
        stack = [(root, -1)]
        seen = {root}
        while stack:
            cur, tier = stack.pop()
            for b in adj[cur]:
                nxt = b.to_node if b.from_node == cur else b.from_node
                if nxt in seen or (cur in subs and nxt in subs):
                    continue
                assert b.tier > tier
                seen.add(nxt)
                stack.append((nxt, b.tier))


def test_synth_roundtrip_through_file(tmp_path):
    grid = synth_topology(seed=4, n_substations=3, n_loads=18)
    path = tmp_path / "grid.yaml"
    save_grid(grid, path)
    back = load_grid(path)
    assert back == grid


def test_synth_loading_factor():
    grid = synth_topology(seed=4, n_substations=3, n_loads=18, loading_factor=0.6)
    assert grid.total_demand.real == pytest.approx(0.6)


def test_synth_infeasible():
    with pytest.raises(GenerationError):
        synth_topology(seed=1, n_substations=4, n_loads=2)
    with pytest.raises(GenerationError):
        synth_topology(seed=1, n_substations=1, n_loads=4, fanout_profile=(1.0, -1.0, 1, 1, 1, 1, 1))


def test_candidates_empty_for_tier7_only(tmp_path):
    path = tmp_path / "mini.yaml"
    path.write_text(MINIMAL_GRID)
    grid = load_grid(path)
    assert candidate_inverter_nodes(grid) == []


def test_candidates_tier1_pair():
    doc = {
        "bases": {"f0_hz": 50.0, "s_base_va": 1e10},
        "tiers": [
            {"tier": 1, "r_per_km_ohm": 0.011, "x_per_km_ohm": 0.028, "voltage_base_v": 66e3},
            {"tier": 7, "r_per_km_ohm": 0.04, "x_per_km_ohm": 0.028, "voltage_base_v": 33e3},
        ],
        "nodes": [
            {"id": "s0", "kind": "substation"},
            {"id": "a", "kind": "junction"},
            {"id": "l0", "kind": "load", "demand_pu": [0.1, 0.02]},
        ],
        "branches": [
            {"from": "s0", "to": "a", "tier": 1, "length_km": 1.0},
            {"from": "a", "to": "l0", "tier": 7, "length_km": 0.2},
        ],
    }
    grid = grid_from_dict(doc)
    assert candidate_inverter_nodes(grid) == ["a"]
    assert candidate_inverter_nodes(grid, include_substations=True) == ["a", "s0"]


def test_candidates_match_bruteforce_scan(stock_grid):
    got = candidate_inverter_nodes(stock_grid)
    subs = set(stock_grid.substations)
    expect = set()
    for b in stock_grid.branches:
        if b.tier in (1, 2):
            expect.update((b.from_node, b.to_node))
    expect -= subs
    assert got == sorted(expect)
    node_ids = {n.id for n in stock_grid.nodes}
    for c in got:
        assert c in node_ids
        assert any(b.tier in (1, 2) for b in stock_grid.adjacency[c])


def test_scale_demands(stock_grid):
    g = scale_demands(stock_grid, 0.5)
    assert g.total_demand.real == pytest.approx(0.5)
    ratios = {
        n.id: n.demand / stock_grid.node(n.id).demand
        for n in g.nodes
        if n.kind == "load"
    }
    assert all(abs(r - list(ratios.values())[0]) < 1e-12 for r in ratios.values())


def test_default_tier_table_shape():
    table = default_tier_table()
    assert [t.tier for t in table] == list(range(8))
    xr = [t.x_per_km / t.r_per_km for t in table]
    assert all(a >= b for a, b in zip(xr, xr[1:]))  # X/R falls with tier
    vb = [t.voltage_base for t in table]
    assert all(a >= b for a, b in zip(vb, vb[1:]))
