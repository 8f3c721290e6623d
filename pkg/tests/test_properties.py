"""Property-based checks of invariants that must hold for every input."""
import warnings

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import self_match_data
from shapemip.deformation import DeformationField, DeformationIndex, deform_mesh, smoothness_terms
from shapemip.geometry import bbox_diagonal, farthest_point_sampling, geodesic_distances, normalize
from shapemip.model import MatchConfig, assemble, decode, encode
from shapemip.pipeline import error_curve
from shapemip.polyhedra import build_polyhedra, grow_polyhedron
from shapemip.reduction import lap_solve, mask_from_costs, percentile_features
from shapemip.shapes import blob
from shapemip.solver.bnb import SIGNED_PERMUTATIONS
from shapemip.solver.gap import g_statistic, relative_gap
from shapemip.solver.relaxation import solve_relaxation

MESH = blob(1)
N = MESH.n_vertices
DIST = geodesic_distances(MESH.graph, np.arange(N))
FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])

vertex = st.integers(0, N - 1)
angles = st.floats(-np.pi, np.pi, allow_nan=False)


def rotation(a, b, c):
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    rz = np.array([[ca, sa, 0], [-sa, ca, 0], [0, 0, 1]])
    ry = np.array([[cb, 0, -sb], [0, 1, 0], [sb, 0, cb]])
    rx = np.array([[1, 0, 0], [0, cc, sc], [0, -sc, cc]])
    return rz @ ry @ rx


@FAST
@given(vertex, vertex, vertex)
def test_geodesics_metric(a, b, c):
    assert abs(DIST[a, b] - DIST[b, a]) <= 1e-12
    assert DIST[a, a] == 0
    assert DIST[a, c] <= DIST[a, b] + DIST[b, c] + 1e-12


@FAST
@given(vertex, st.integers(2, 20))
def test_fps_min_distance_non_increasing(seed, count):
    idx = farthest_point_sampling(MESH.graph, count, seed=seed)
    assert idx[0] == seed and len(set(idx.tolist())) == count
    gaps = [DIST[idx[k], idx[:k]].min() for k in range(1, count)]
    assert np.all(np.diff(gaps) <= 1e-12)


@FAST
@given(st.floats(0.01, 100), st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_normalize_is_idempotent_and_invariant(s, shift):
    moved = type(MESH)(MESH.vertices * s + shift, MESH.faces)
    a, _, _ = normalize(moved)
    b, scale, off = normalize(a)
    assert abs(bbox_diagonal(a.vertices) - 1) < 1e-12
    assert abs(scale - 1) < 1e-12 and np.abs(off).max() < 1e-12
    ref, _, _ = normalize(MESH)
    assert np.abs(a.vertices - ref.vertices).max() < 1e-9


@FAST
@given(vertex, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_patch_growth_monotone_in_eta(v, e1, e2):
    lo, hi = sorted((e1, e2))
    a = grow_polyhedron(MESH, v, lo)
    b = grow_polyhedron(MESH, v, hi)
    assert a.ring_level <= b.ring_level
    assert set(a.vertex_ids.tolist()) <= set(b.vertex_ids.tolist())


@FAST
@given(st.lists(vertex, min_size=1, max_size=6, unique=True), st.integers(1, 8), st.floats(0.05, 1.0))
def test_polyhedra_anchor_and_size(ctrl, max_points, eta):
    for j, p in enumerate(build_polyhedra(MESH, np.array(ctrl), eta, max_points)):
        assert p.vertex_ids[0] == ctrl[j] and p.anchor == j
        assert 1 <= p.d <= max(max_points, 1)
        assert np.array_equal(p.vertices, MESH.vertices[p.vertex_ids])


@FAST
@given(st.lists(vertex, min_size=1, max_size=5, unique=True), st.integers(2, 40))
def test_percentile_rows_non_decreasing(ctrl, n):
    g = percentile_features(DIST[ctrl], n)
    assert g.shape == (len(ctrl), n)
    assert np.all(np.diff(g, axis=1) >= 0)


@FAST
@given(st.integers(1, 5), st.integers(0, 3), st.integers(1, 6), st.integers(0, 10_000))
def test_mask_costs_non_decreasing(u, extra, n_lap, seed):
    c = np.random.default_rng(seed).uniform(size=(u, u + extra))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = mask_from_costs(c, n_lap)
    assert np.all(np.diff(m.costs) >= -1e-12)
    assert np.all(m.allowed.sum(axis=1) >= 1)
    best = lap_solve(c)
    assert m.costs[0] == best.cost
    for a in m.assignments:
        assert m.allowed[np.arange(u), a].all()


@FAST
@given(angles, angles, angles, st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_uniform_fields_are_smooth_and_consistent(a, b, c, shift):
    R = rotation(a, b, c)
    cen = MESH.centroids
    fld = DeformationField(R, np.zeros((MESH.n_faces, 3, 3)), cen @ R - cen + shift, cen)
    idx = DeformationIndex.contiguous(MESH.n_faces)
    sm = smoothness_terms(MESH, idx)
    assert np.abs(sm.evaluate(idx.pack(fld, np.zeros(idx.size)))).max() < 1e-9
    lo, w1 = deform_mesh(MESH, fld, "min")
    hi, w2 = deform_mesh(MESH, fld, "max")
    assert np.abs(lo.vertices - hi.vertices).max() <= 1e-9 and max(w1, w2) < 1e-9
    assert np.allclose(lo.vertices, MESH.vertices @ R + shift)


@FAST
@given(st.lists(st.one_of(st.floats(0, 2), st.just(np.inf)), min_size=1, max_size=20),
       st.lists(st.floats(0, 2), min_size=2, max_size=10))
def test_error_curve_monotone_and_bounded(errors, thr):
    thr = np.sort(thr)
    f = error_curve(np.array(errors), thr)
    assert np.all((0 <= f) & (f <= 1)) and np.all(np.diff(f) >= 0)


@FAST
@given(st.floats(0, 1e6), st.floats(0, 1))
def test_relative_gap_bounded(upper, frac):
    assert 0 <= relative_gap(upper, upper * frac) <= 1


@FAST
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 1)), min_size=1, max_size=10),
       st.floats(0, 100), st.floats(0, 100))
def test_g_statistic_monotone_in_time(results, t1, t2):
    lo, hi = sorted((t1, t2))
    assert 0 <= g_statistic(results, lo) <= g_statistic(results, hi) <= 1


DATA = self_match_data(3, mask=None)
MODEL = assemble(DATA, MatchConfig(bins=2))
ROOT = solve_relaxation(MODEL).bound


@settings(max_examples=15, deadline=None)
# single-point patches hold unit mass each, so only permutations are feasible
@given(st.permutations([0, 1, 2]), st.integers(0, 23))
def test_encoded_points_feasible_and_above_root_bound(matches, k):
    R = SIGNED_PERMUTATIONS[k]
    x = encode(MODEL, np.array(matches), R)
    sol = decode(MODEL, x)
    assert list(sol.matches) == matches
    res = MODEL.residuals(x)
    assert max(res.values()) <= 1e-7, {k: v for k, v in res.items() if v > 1e-7}
    assert MODEL.objective(x) >= ROOT - 1e-7
