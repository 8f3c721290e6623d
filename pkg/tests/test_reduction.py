import itertools

import numpy as np
import pytest

from shapemip.geometry import farthest_point_sampling, geodesic_distances
from shapemip.reduction import (InfeasibleAssignment, build_mask, lap_solve, mask_from_costs,
                                percentile_features)
from shapemip.shapes import blob


def brute_lap(c):
    u, v = c.shape
    best = min(itertools.permutations(range(v), u), key=lambda p: (sum(c[i, j] for i, j in enumerate(p)), p))
    return np.array(best), sum(c[i, j] for i, j in enumerate(best))


def test_percentile_examples():
    assert np.allclose(percentile_features([0, 1, 2, 3], 2), [[0, 3]])
    assert np.allclose(percentile_features([2.5] * 6, 4), 2.5)
    assert np.allclose(percentile_features([0, 1, 2, 3, 4], 3), [[0, 2, 4]])


def test_percentile_errors():
    with pytest.raises(ValueError, match="control point 1"):
        percentile_features([[0, 1], [0, np.inf]], 2)
    with pytest.raises(ValueError):
        percentile_features([0, 1], 1)


def test_lap_examples():
    r = lap_solve([[0, 9], [9, 0]])
    assert list(r.columns) == [0, 1] and r.cost == 0
    assert list(lap_solve([[1, 1], [1, 1]]).columns) == [0, 1]
    r = lap_solve([[4, 1, 3], [2, 0, 5]])
    assert list(r.columns) == [1, 0] and r.cost == 3


def test_lap_infeasible():
    r = lap_solve([[1, 2], [3, 4]], forbidden=[[True, True], [False, False]])
    assert not r.feasible
    r = lap_solve([[1, 2], [3, 4]], forbidden=[[False, True], [False, True]])
    assert not r.feasible
    with pytest.raises(ValueError):
        lap_solve(np.ones((3, 2)))


def test_lap_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        u = rng.integers(1, 5)
        v = rng.integers(u, 6)
        c = rng.integers(0, 20, size=(u, v)).astype(float)
        r = lap_solve(c)
        _, best = brute_lap(c)
        assert r.cost == pytest.approx(best)


def test_mask_examples():
    assert np.array_equal(mask_from_costs(np.array([[5.0, 1.0, 3.0]]), 2).allowed, [[False, True, True]])
    d = np.abs(np.subtract.outer(np.arange(4.0), np.arange(4.0)))
    assert np.array_equal(mask_from_costs(d, 1).allowed, np.eye(4, dtype=bool))
    assert mask_from_costs(d, 4).allowed.all()


def test_mask_row_counts_and_costs():
    rng = np.random.default_rng(3)
    d = rng.uniform(size=(5, 7))
    m = mask_from_costs(d, 5)
    assert np.all(m.allowed.sum(axis=1) == 5)
    assert np.all(np.diff(m.costs) >= -1e-12)


def test_mask_early_stop_warns():
    with pytest.warns(UserWarning, match="infeasible"):
        m = mask_from_costs(np.ones((2, 2)), 3)
    assert m.allowed.all() and len(m.assignments) == 2


def test_mask_first_lap_infeasible():
    with pytest.raises(InfeasibleAssignment):
        mask_from_costs(np.array([[np.inf, np.inf], [0.0, 1.0]]), 1)


def test_mask_u_greater_than_v_is_full():
    with pytest.warns(UserWarning):
        m = build_mask(np.zeros((3, 2)), np.zeros((2, 2)), 1)
    assert m.allowed.all()


def test_self_match_identity_in_mask():
    b = blob(1)
    ctrl = farthest_point_sampling(b.graph, 12, seed=0)
    g = percentile_features(geodesic_distances(b.graph, ctrl), b.n_vertices)
    m = build_mask(g, g, 1)
    assert np.array_equal(m.allowed, np.eye(12, dtype=bool))


def test_mask_csv():
    m = mask_from_costs(np.array([[0.0, 1.0]]), 1)
    assert m.to_csv().splitlines() == ["i,j,distance,allowed", "0,0,0,1", "0,1,1,0"]
