import itertools

import numpy as np
import pytest
from scipy import sparse
from scipy.optimize import linprog

from conftest import self_match_data
from shapemip.model import MatchConfig, ModelBuilder, assemble, encode
from shapemip.solver.bnb import (BnBSettings, branch_and_bound, candidate_assignments, nearest_signed_permutation,
                                 procrustes, round_and_repair, round_assignment)
from shapemip.solver.gap import (LogAuditError, audit_log, format_log_line, g_statistic, parse_log_line,
                                 relative_gap, solved_fraction)
from shapemip.solver.ipm import ConeDims, solve_socp
from shapemip.solver.relaxation import polish, solve_relaxation, standard_form
from shapemip.solver.verify import objective_value, verify_solution
from shapemip.shapes import rotation_z


# ---------------------------------------------------------------- interior point


def test_ipm_sqrt2():
    # variables (x, s): min s, s >= ||(x - 1, x + 1)||
    G = sparse.csr_matrix(np.array([[0, -1.0], [-1, 0], [-1, 0]]))
    h = np.array([0.0, -1.0, 1.0])
    r = solve_socp(np.array([0, 1.0]), G, h, ConeDims(0, (3,)))
    assert r.status == "optimal"
    assert r.x[1] == pytest.approx(np.sqrt(2), abs=1e-7)
    assert r.x[0] == pytest.approx(0, abs=1e-6)


def test_ipm_infeasible_lp():
    # x >= 1 and x <= 0
    G = sparse.csr_matrix(np.array([[-1.0], [1.0]]))
    r = solve_socp(np.array([1.0]), G, np.array([-1.0, 0.0]), ConeDims(2))
    assert r.status == "infeasible"


def test_ipm_matches_linprog():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n, m, p = 6, 10, 2
        A = rng.normal(size=(p, n))
        x0 = rng.uniform(0.1, 1, n)
        b = A @ x0
        G = np.vstack([-np.eye(n), rng.normal(size=(m - n, n))])
        h = np.concatenate([np.zeros(n), G[n:] @ x0 + rng.uniform(0.1, 1, m - n)])
        c = rng.uniform(0, 1, n)
        ref = linprog(c, A_ub=G, b_ub=h, A_eq=A, b_eq=b, bounds=(None, None), method="highs")
        r = solve_socp(c, sparse.csr_matrix(G), h, ConeDims(m), sparse.csr_matrix(A), b)
        assert r.status == "optimal"
        assert r.pobj == pytest.approx(ref.fun, rel=1e-6, abs=1e-7)


def test_ipm_matches_clarabel_on_socps():
    clarabel = pytest.importorskip("clarabel")
    rng = np.random.default_rng(1)
    for _ in range(8):
        n = 5
        x0 = rng.normal(size=n)
        blocks, hs, q = [], [], []
        for _ in range(3):
            F = rng.normal(size=(3, n))
            g = rng.normal(size=3)
            t = np.linalg.norm(F @ x0 + g) + rng.uniform(0.1, 1)
            a = rng.normal(size=n)
            # a'x0 + t0 >= ||F x0 + g||: row [-a; -F] x + s = [t - a'x0 ...]
            blocks.append(np.vstack([-a, -F]))
            hs.append(np.concatenate([[t - a @ x0], g]))
            q.append(4)
        G = np.vstack([np.vstack([np.eye(n), -np.eye(n)])] + blocks)
        h = np.concatenate([np.full(2 * n, 5.0) + np.concatenate([x0, -x0])] + hs)
        c = rng.normal(size=n)
        dims = ConeDims(2 * n, tuple(q))
        r = solve_socp(c, sparse.csr_matrix(G), h, dims)
        cones = [clarabel.NonnegativeConeT(2 * n)] + [clarabel.SecondOrderConeT(k) for k in q]
        st = clarabel.DefaultSettings()
        st.verbose = False
        ref = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), c, sparse.csc_matrix(G), h, cones, st).solve()
        assert r.status == "optimal"
        assert r.pobj == pytest.approx(ref.obj_val, rel=1e-6, abs=1e-7)


# ---------------------------------------------------------------- relaxation


def norm_model(a):
    mb = ModelBuilder()
    x = mb.add_var("x", (len(a),))
    s = mb.add_var("s", lb=0.0)
    mb.add_cone(s, np.arange(len(a)), x, np.ones(len(a)), -np.asarray(a, float), "fit")
    mb.add_objective(s, 1.0)
    return mb.build(), x


@pytest.mark.parametrize("engine", ["ipm", "clarabel"])
def test_relaxation_norm_fit(engine):
    a = np.array([0.5, -2.0, 3.0])
    m, x = norm_model(a)
    r = solve_relaxation(m, engine=engine)
    assert r.ok
    assert r.objective == pytest.approx(0, abs=1e-6)
    assert np.allclose(r.x[x], a, atol=1e-5)


@pytest.mark.parametrize("engine", ["ipm", "clarabel"])
def test_relaxation_infeasible(engine):
    mb = ModelBuilder()
    x = mb.add_var("x")
    mb.rows([([x], [-1.0], -1.0), ([x], [1.0], 0.0)], "le", "box")
    mb.add_objective(x, 1.0)
    r = solve_relaxation(mb.build(), engine=engine)
    assert r.status == "infeasible"


def test_fixing_non_binary_rejected():
    m, x = norm_model([1.0])
    with pytest.raises(ValueError):
        solve_relaxation(m, {int(x[0]): 1.0})


def test_presolve_detects_violated_fixed_row():
    mb = ModelBuilder()
    z = mb.add_var("z", (2,), kind="binary")
    mb.rows([(list(z), [1.0, 1.0], 1.0)], "le", "pack")
    m = mb.build()
    assert solve_relaxation(m, {int(z[0]): 1.0, int(z[1]): 1.0}).status == "infeasible"
    sf = standard_form(m, {int(z[0]): 1.0})
    assert len(sf.free) == 1


def test_engines_agree_on_match_relaxation():
    m = assemble(self_match_data(3, mask=None), MatchConfig(bins=2))
    fx = {int(m.binaries[0]): 1.0}
    a = solve_relaxation(m, fx, engine="clarabel")
    b = solve_relaxation(m, fx, engine="ipm")
    assert a.ok and b.ok
    assert a.bound == pytest.approx(b.bound, abs=1e-5)


def test_polish_reaches_exact_identity():
    data = self_match_data(4)
    m = assemble(data)
    x = encode(m, np.arange(4), np.eye(3))
    fix = {int(i): float(round(x[i])) for i in m.binaries}
    r = solve_relaxation(m, fix)
    y = polish(m, r.x, fix)
    res = m.residuals(y)
    assert max(res.values()) <= 1e-9
    assert m.objective(y) <= r.objective + 1e-9


# ---------------------------------------------------------------- gap


def test_relative_gap_examples():
    assert relative_gap(2.0, 1.9) == pytest.approx(0.05)
    assert relative_gap(1.5, 1.5) == 0
    assert relative_gap(np.inf, 0.0) == 1.0
    assert relative_gap(0.0, 0.0) == 0
    assert relative_gap(1e-12, 0.0) == pytest.approx(1e-12 / 1e-10)


def test_g_statistic_examples():
    res = [(10.0, 0.0), (20.0, 0.5)]
    assert g_statistic(res, 15) == 0.5
    assert g_statistic(res, 25) == 0.75
    assert g_statistic(res, 5) == 0
    assert solved_fraction(res, 15) == 0.5
    with pytest.raises(ValueError):
        g_statistic([], 1.0)


def test_audit_log():
    ok = [{"lower": 0.0, "upper": 3.0}, {"lower": 1.0, "upper": 2.0}, {"lower": 1.0, "upper": 2.0}]
    audit_log(ok)
    with pytest.raises(LogAuditError):
        audit_log([{"lower": 1.0, "upper": 2.0}, {"lower": 0.5, "upper": 2.0}])
    with pytest.raises(LogAuditError):
        audit_log([{"lower": 0.0, "upper": 2.0}, {"lower": 0.0, "upper": 2.5}])


def test_log_line_roundtrip():
    e = {"time": 1.25, "upper": 0.5, "lower": 0.25, "gap": 0.5, "nodes": 7}
    back = parse_log_line(format_log_line(e))
    assert back == pytest.approx(e)


# ---------------------------------------------------------------- repair


def p_values(model, rows):
    x = np.zeros(model.n_vars)
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            x[model.layout.P[i, j]] = v
    return x


def test_round_assignment_argmax():
    m = assemble(self_match_data(2, mask=np.ones((2, 2), bool)))
    x = p_values(m, [[0.6, 0.4], [0.3, 0.7]])
    assert list(round_assignment(m, x)) == [0, 1]


def test_round_assignment_injective_greedy():
    m = assemble(self_match_data(2, mask=np.ones((2, 2), bool)), MatchConfig(injective=True))
    x = p_values(m, [[0.9, 0.1], [0.6, 0.4]])
    assert list(round_assignment(m, x)) == [0, 1]
    x = p_values(m, [[0.6, 0.4], [0.9, 0.1]])
    assert list(round_assignment(m, x)) == [1, 0]


def test_round_assignment_respects_fixings():
    m = assemble(self_match_data(2, mask=np.ones((2, 2), bool)))
    x = p_values(m, [[0.6, 0.4], [0.3, 0.7]])
    assert list(round_assignment(m, x, {int(m.layout.P[0, 0]): 0.0})) == [1, 1]


def test_integral_point_returned_unchanged():
    data = self_match_data(3)
    m = assemble(data)
    x = encode(m, np.arange(3), np.eye(3))
    best = round_and_repair(m, x)
    assert best is not None
    val, y = best
    # rotation cell codes may differ (grid points lie on cell borders); the matching may not
    P = m.layout.P[m.layout.P >= 0]
    assert np.array_equal(np.round(y[P]), np.round(x[P]))
    assert val <= m.objective(x) + 1e-9


def test_procrustes_and_signed_permutation():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(6, 3))
    R = rotation_z(0.3)
    assert np.allclose(procrustes(a, a @ R), R)
    assert np.allclose(nearest_signed_permutation(rotation_z(np.pi / 2 + 0.1)), rotation_z(np.pi / 2).round())


# ---------------------------------------------------------------- branch and bound


def toy_misocp(seed=0, n_bin=4):
    """min ||x - sum_k z_k p_k|| + c'z + d'x over binaries z with a cardinality row."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n_bin, 2))
    mb = ModelBuilder()
    z = mb.add_var("z", (n_bin,), kind="binary")
    x = mb.add_var("x", (2,), lb=-3, ub=3)
    s = mb.add_var("s", lb=0)
    rows, cols, vals = [], [], []
    for k in range(2):
        rows += [k] + [k] * n_bin
        cols += [x[k]] + list(z)
        vals += [1.0] + list(-pts[:, k])
    mb.add_cone(s, rows, cols, vals, np.zeros(2), "fit")
    mb.rows([(list(z), [-1.0] * n_bin, -1.0), (list(z), [1.0] * n_bin, 2.0)], "le", "card")
    mb.add_objective(s, 1.0)
    for k, cz in enumerate(rng.uniform(-0.5, 0.5, n_bin)):
        mb.add_objective(z[k], cz)
    for k, cx in enumerate(rng.uniform(-0.5, 0.5, 2)):
        mb.add_objective(x[k], cx)
    return mb.build()


def brute_force(model):
    best = np.inf
    for bits in itertools.product((0.0, 1.0), repeat=len(model.binaries)):
        r = solve_relaxation(model, dict(zip(map(int, model.binaries), bits)))
        if r.ok:
            best = min(best, r.objective)
    return best


@pytest.mark.parametrize("seed", range(4))
def test_bnb_matches_brute_force_on_toy(seed):
    m = toy_misocp(seed)
    ref = brute_force(m)
    r = branch_and_bound(m, settings=BnBSettings(gap_target=0.0, budget=60))
    assert r.status == "optimal"
    assert r.upper == pytest.approx(ref, rel=1e-6, abs=1e-7)
    audit_log(r.log)
    assert r.lower <= r.upper + 1e-7


def test_bnb_integral_root_single_node():
    mb = ModelBuilder()
    z = mb.add_var("z", kind="binary")
    s = mb.add_var("s", lb=0)
    mb.add_cone(s, [0], [z], [1.0], [-1.0], "fit")  # s >= |z - 1|
    mb.add_objective(s, 1.0)
    r = branch_and_bound(mb.build())
    assert r.nodes == 1 and r.status == "optimal"
    assert r.gap == 0


def test_bnb_infeasible():
    mb = ModelBuilder()
    z = mb.add_var("z", (2,), kind="binary")
    mb.rows([(list(z), [1.0, 1.0], 0.5), (list(z), [-1.0, -1.0], -1.5)], "le", "clash")
    mb.add_objective(z[0], 1.0)
    r = branch_and_bound(mb.build())
    assert r.status == "infeasible"
    assert r.upper == np.inf and r.gap == 1.0


def test_bnb_time_limit():
    m = toy_misocp(0, n_bin=8)
    r = branch_and_bound(m, settings=BnBSettings(budget=0.0, gap_target=0.0))
    assert r.status == "time-limit"


def test_bnb_gap_limit_status():
    m = toy_misocp(1)
    r = branch_and_bound(m, settings=BnBSettings(gap_target=0.9))
    assert r.status in ("gap-limit", "optimal")
    assert r.gap <= 0.9


def test_bnb_self_match_identity_and_verifier():
    data = self_match_data(5)
    cfg = MatchConfig()
    m = assemble(data, cfg)
    r = branch_and_bound(m, settings=BnBSettings(budget=120))
    assert r.status == "optimal"
    assert np.array_equal(r.solution.matches, np.arange(5))
    assert r.upper <= 1e-5 and r.gap <= 1e-4
    rep = verify_solution(r.solution, data, cfg)
    assert rep.ok, rep.failures()
    w = m.layout.weights
    assert objective_value(r.solution, data, cfg, w) == pytest.approx(r.upper, abs=1e-7)


def test_bnb_deterministic():
    m = toy_misocp(2, n_bin=6)
    a = branch_and_bound(m, settings=BnBSettings(gap_target=0.0))
    b = branch_and_bound(m, settings=BnBSettings(gap_target=0.0))
    assert a.history == b.history
    assert np.array_equal(a.x, b.x) and a.upper == b.upper and a.nodes == b.nodes


def test_bnb_parallel_workers_agree():
    m = toy_misocp(3, n_bin=6)
    a = branch_and_bound(m, settings=BnBSettings(gap_target=0.0))
    b = branch_and_bound(m, settings=BnBSettings(gap_target=0.0, workers=3))
    assert b.upper == pytest.approx(a.upper, rel=1e-7, abs=1e-9)
    audit_log(b.log)


def test_candidate_assignments_complete():
    m = assemble(self_match_data(3))
    x = encode(m, np.arange(3), np.eye(3))
    for a in candidate_assignments(m, x, {}):
        assert set(a) == set(int(i) for i in m.binaries)


def test_bound_sandwich_on_random_completions():
    m = toy_misocp(5, n_bin=5)
    r = branch_and_bound(m, settings=BnBSettings(gap_target=0.0))
    rng = np.random.default_rng(0)
    for _ in range(20):
        bits = rng.integers(0, 2, len(m.binaries)).astype(float)
        rel = solve_relaxation(m, dict(zip(map(int, m.binaries), bits)))
        if rel.ok:
            assert rel.objective >= r.upper - 1e-6
