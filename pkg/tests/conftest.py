"""Shared fixtures: hand-built grids, the engineered unstable case, and
the stock synthetic 9-substation network."""

from __future__ import annotations

import math

import numpy as np
import pytest

from vsgstab.allocation import (
    ROTATING,
    VIRTUAL,
    SourceParams,
    droop_gains,
    inertia_allocation,
)
from vsgstab.topology import (
    Branch,
    GridGraph,
    Node,
    default_tier_table,
    synth_topology,
)

T_C = 1.0 / (4.0 * math.pi)

_TIERS = default_tier_table()
_TIER_MAP = {t.tier: t for t in _TIERS}


def tier_branch(a: str, b: str, tier: int, length_km: float) -> Branch:
    t = _TIER_MAP[tier]
    return Branch(a, b, tier, length_km,
                  complex(t.r_per_km * length_km, t.x_per_km * length_km))


def make_fleet(entries, h_total=4.0, t_c=T_C, r0=3.0, f0=50.0):
    """entries: list of (node, kind, capacity)."""
    caps = [c for _, _, c in entries]
    hs = inertia_allocation(caps, h_total)
    out = []
    for (node, kind, s), h in zip(entries, hs):
        k_f, k_v = droop_gains(float(h), t_c, r0)
        out.append(SourceParams(node=node, kind=kind, S=s, H=float(h),
                                k_f=k_f, k_v=k_v, T_c=t_c, f0=f0))
    return tuple(out)


@pytest.fixture(scope="session")
def two_source_grid():
    """Small stable grid: SG at the substation, one far-ish VSG node."""
    nodes = (
        Node("a", "junction"),
        Node("j0", "junction"),
        Node("l0", "load", demand=0.4 + 0.1j),
        Node("s0", "substation"),
    )
    branches = (
        tier_branch("s0", "j0", 0, 2.0),
        tier_branch("j0", "a", 1, 1.5),
        tier_branch("j0", "l0", 7, 0.3),
    )
    return GridGraph(nodes=nodes, branches=branches, tier_table=_TIERS).validate()


@pytest.fixture(scope="session")
def two_source_fleet(two_source_grid):
    return make_fleet([("s0", ROTATING, 0.8), ("a", VIRTUAL, 0.2)])


@pytest.fixture(scope="session")
def unstable_case():
    """Engineered 3-source case: a small VSG sits right next to the SG
    over a resistive tier-2 stub and destabilizes the grid, while the
    second (far, larger) VSG starts below the metric target."""
    nodes = (
        Node("inv1", "junction"),
        Node("inv2", "junction"),
        Node("j0", "junction"),
        Node("l0", "load", demand=0.5 + 0.16j),
        Node("s0", "substation"),
    )
    branches = (
        tier_branch("s0", "inv1", 2, 0.4),
        tier_branch("s0", "j0", 0, 3.0),
        tier_branch("j0", "inv2", 1, 5.0),
        tier_branch("j0", "l0", 7, 0.3),
    )
    grid = GridGraph(nodes=nodes, branches=branches, tier_table=_TIERS).validate()
    fleet = make_fleet(
        [("s0", ROTATING, 0.70), ("inv1", VIRTUAL, 0.05), ("inv2", VIRTUAL, 0.25)]
    )
    return grid, fleet


@pytest.fixture(scope="session")
def stock_grid():
    """The default synthetic 9-substation study network."""
    return synth_topology(seed=7, n_substations=9, n_loads=120)


@pytest.fixture(scope="session")
def mini_grid():
    """A lighter synthetic network for cheap end-to-end checks."""
    return synth_topology(seed=3, n_substations=3, n_loads=24)


def assert_spectra_close(a, b, atol: float) -> None:
    """Compare eigenvalue multisets through optimal pairing."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    assert a.size == b.size
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    worst = cost[rows, cols].max()
    assert worst <= atol, f"spectra differ by {worst:.3e} (tol {atol:.3e})"


def random_symmetric_network(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random connected passive admittance matrix with shunts."""
    Y = np.zeros((n, n), dtype=complex)
    # random spanning tree keeps the eliminated block invertible
    for j in range(1, n):
        i = int(rng.integers(j))
        y = complex(rng.uniform(0.5, 3.0), rng.uniform(-3.0, 3.0))
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        i, j = rng.choice(n, size=2, replace=False)
        y = complex(rng.uniform(0.1, 1.0), rng.uniform(-1.0, 1.0))
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    for i in range(n):
        if rng.random() < 0.5:
            Y[i, i] += complex(rng.uniform(0.0, 0.5), rng.uniform(-0.2, 0.2))
    return Y
