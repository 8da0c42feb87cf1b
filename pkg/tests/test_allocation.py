"""Capacity shares, inertia split, droop gains."""

from __future__ import annotations

import math

import numpy as np
import pytest

from vsgstab.allocation import (
    ROTATING,
    VIRTUAL,
    ScenarioConfig,
    SourceParams,
    capacity_shares,
    droop_gains,
    inertia_allocation,
    snsp_of,
)
from vsgstab.errors import AllocationError, ConfigurationError, PlacementError
from vsgstab.topology import grid_from_dict

from conftest import T_C, make_fleet


def sharing_matrix(caps):
    """The capacity-weighted sharing system solved by inertia_allocation."""
    s = np.asarray(caps, dtype=float)
    n = s.size
    M = np.zeros((n, n))
    M[0, :] = s
    for i in range(1, n):
        M[i, 0] = s[i]
        M[i, i] = -s[0]
    rhs = np.zeros(n)
    rhs[0] = s.sum()  # times h_total below
    return M, rhs


def grid_60_40():
    """Two substations with a 60/40 building split and two candidate nodes."""
    doc = {
        "bases": {"f0_hz": 50.0, "s_base_va": 1e10},
        "tiers": [
            {"tier": 0, "r_per_km_ohm": 0.017, "x_per_km_ohm": 0.068, "voltage_base_v": 132e3},
            {"tier": 1, "r_per_km_ohm": 0.011, "x_per_km_ohm": 0.028, "voltage_base_v": 66e3},
            {"tier": 7, "r_per_km_ohm": 0.04, "x_per_km_ohm": 0.028, "voltage_base_v": 33e3},
        ],
        "nodes": [
            {"id": "s0", "kind": "substation"},
            {"id": "s1", "kind": "substation"},
            {"id": "a0", "kind": "junction"},
            {"id": "a1", "kind": "junction"},
        ]
        + [{"id": f"s0-l{i}", "kind": "load", "demand_pu": [0.1, 0.02]} for i in range(3)]
        + [{"id": f"s1-l{i}", "kind": "load", "demand_pu": [0.1, 0.02]} for i in range(2)],
        "branches": [
            {"from": "s0", "to": "s1", "tier": 0, "length_km": 1.0},
            {"from": "s0", "to": "a0", "tier": 1, "length_km": 1.0},
            {"from": "s1", "to": "a1", "tier": 1, "length_km": 1.0},
        ]
        + [{"from": "a0", "to": f"s0-l{i}", "tier": 7, "length_km": 0.3} for i in range(3)]
        + [{"from": "a1", "to": f"s1-l{i}", "tier": 7, "length_km": 0.3} for i in range(2)],
    }
    return grid_from_dict(doc)


def test_capacity_shares_arithmetic():
    grid = grid_60_40()
    cfg = ScenarioConfig(snsp=0.5, n_inv=2, rng_seed=0)
    alloc = capacity_shares(grid, cfg)
    assert alloc.beta == {"s0": 0.6, "s1": 0.4}
    sg = {s.node: s.S for s in alloc.sources if s.kind == ROTATING}
    inv = [s.S for s in alloc.sources if s.kind == VIRTUAL]
    assert sg["s0"] == pytest.approx(0.30)
    assert sg["s1"] == pytest.approx(0.20)
    assert inv == [pytest.approx(0.25), pytest.approx(0.25)]
    assert alloc.achieved_snsp == pytest.approx(0.5, abs=1e-12)


def test_snsp_zero_removes_inverters():
    grid = grid_60_40()
    alloc = capacity_shares(grid, ScenarioConfig(snsp=0.0, n_inv=5, rng_seed=0))
    kinds = {s.kind for s in alloc.sources}
    assert kinds == {ROTATING}
    sg = {s.node: s.S for s in alloc.sources}
    assert sg["s0"] == pytest.approx(0.6)
    assert sg["s1"] == pytest.approx(0.4)


def test_snsp_one_removes_rotating():
    grid = grid_60_40()
    alloc = capacity_shares(grid, ScenarioConfig(snsp=1.0, n_inv=2, rng_seed=0))
    assert {s.kind for s in alloc.sources} == {VIRTUAL}
    assert [s.S for s in alloc.sources] == [pytest.approx(0.5)] * 2


def test_placement_errors():
    grid = grid_60_40()
    with pytest.raises(PlacementError):
        capacity_shares(grid, ScenarioConfig(snsp=0.5, n_inv=3, rng_seed=0))
    with pytest.raises(ConfigurationError):
        ScenarioConfig(snsp=0.5, n_inv=0).check()


def test_placement_deterministic(stock_grid):
    cfg = ScenarioConfig(snsp=0.5, n_inv=10, rng_seed=42)
    a = capacity_shares(stock_grid, cfg)
    b = capacity_shares(stock_grid, cfg)
    assert a == b
    c = capacity_shares(stock_grid, ScenarioConfig(snsp=0.5, n_inv=10, rng_seed=43))
    assert a.inverter_nodes != c.inverter_nodes


@pytest.mark.parametrize(
    "caps,h_total,expect",
    [
        ([0.5, 0.5], 4.0, [4.0, 4.0]),
        ([0.75, 0.25], 4.0, [4.8, 1.6]),
        ([1.0], 6.0, [6.0]),
    ],
)
def test_inertia_examples(caps, h_total, expect):
    h = inertia_allocation(caps, h_total)
    assert h == pytest.approx(expect, rel=1e-12)
    assert float(np.dot(h, caps)) / sum(caps) == pytest.approx(h_total, rel=1e-12)


def test_inertia_closed_form_matches_linear_solve():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        caps = rng.uniform(0.05, 2.0, size=n)
        h_total = float(rng.uniform(0.5, 10.0))
        closed = inertia_allocation(caps, h_total)
        M, rhs = sharing_matrix(caps)
        solved = np.linalg.solve(M, rhs * h_total)
        np.testing.assert_allclose(closed, solved, rtol=1e-10)


def test_inertia_rejects_zero_capacity():
    with pytest.raises(AllocationError):
        inertia_allocation([0.5, 0.0], 4.0)


def test_droop_gain_examples():
    k_f, k_v = droop_gains(4.0, T_C, 3.0)
    assert k_f == pytest.approx(1.0 / (32 * math.pi), rel=1e-12)
    assert k_v == pytest.approx(3.0 / (32 * math.pi), rel=1e-12)
    k_f2, _ = droop_gains(8.0, T_C, 3.0)
    assert k_f2 == pytest.approx(k_f / 2, rel=1e-14)
    # the infinite-inertia limit drives the droop to zero
    k_f_inf, _ = droop_gains(1e12, T_C, 3.0)
    assert k_f_inf < 1e-12


def test_droop_inertia_roundtrip():
    rng = np.random.default_rng(1)
    caps = rng.uniform(0.05, 1.0, size=8)
    hs = inertia_allocation(caps, 5.0)
    for h in hs:
        k_f, _ = droop_gains(float(h), T_C, 3.0)
        assert T_C / (2 * k_f) == pytest.approx(float(h), rel=1e-12)


def test_snsp_of_examples():
    rot = make_fleet([("s0", ROTATING, 0.5)])
    assert snsp_of(rot) == 0.0
    vir = make_fleet([("a", VIRTUAL, 0.3), ("b", VIRTUAL, 0.7)])
    assert snsp_of(vir) == 1.0
    mixed = make_fleet(
        [("s0", ROTATING, 0.5), ("a", VIRTUAL, 0.25), ("b", VIRTUAL, 0.25)]
    )
    assert snsp_of(mixed) == pytest.approx(0.5, abs=1e-15)


def test_achieved_snsp_tracks_config(stock_grid):
    for snsp in [0.2, 0.5, 0.85]:
        alloc = capacity_shares(stock_grid, ScenarioConfig(snsp=snsp, n_inv=8, rng_seed=1))
        assert snsp_of(alloc.sources) == pytest.approx(snsp, abs=1e-12)


def test_source_invariant_checks():
    with pytest.raises(AllocationError):
        SourceParams(node="x", kind=VIRTUAL, S=0.5, H=4.0, k_f=0.1, k_v=0.3, T_c=T_C).check()
    ok = SourceParams(node="x", kind=VIRTUAL, S=0.5, H=4.0,
                      k_f=T_C / 8.0, k_v=3 * T_C / 8.0, T_c=T_C)
    ok.check()
    assert ok.D == pytest.approx(8.0 / T_C)
