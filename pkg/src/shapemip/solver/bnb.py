"""Best-first branch and bound over the binaries of a ConicModel."""
from __future__ import annotations

import heapq
import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..model.blocks import Solution, decode
from ..model.conic import ConicModel
from ..model.so3 import codes_for_rotation
from .gap import DELTA, format_log_line, relative_gap
from .relaxation import RelaxationResult, default_engine, polish, solve_relaxation

logger = logging.getLogger(__name__)

# gap at or below which a run is reported optimal (the usual MIP default)
OPTIMAL_GAP = 1e-4


@dataclass
class BnBSettings:
    budget: float = 3600.0
    gap_target: float = OPTIMAL_GAP
    workers: int = 1
    engine: str | None = None
    int_tol: float = 1e-6
    prune_rel: float = 1e-12
    delta: float = DELTA
    verify_tol: float = 1e-6
    max_candidates: int = 4


@dataclass(order=True)
class BnBNode:
    key: tuple
    fixings: dict = field(compare=False)
    bound: float = field(compare=False)
    depth: int = field(compare=False)


@dataclass
class SolveResult:
    status: str  # optimal | gap-limit | time-limit | infeasible
    x: np.ndarray | None
    upper: float
    lower: float
    gap: float
    wall_time: float
    nodes: int
    log: list
    solution: Solution | None = None
    history: list = field(default_factory=list)  # processed node keys, for determinism checks

    def to_dict(self) -> dict:
        sol = self.solution
        out = {"status": self.status, "upper": _f(self.upper), "lower": _f(self.lower), "gap": self.gap,
               "wall_time": self.wall_time, "nodes": self.nodes, "log": self.log}
        if sol is not None:
            out.update({"P": sol.P.round().astype(int).tolist(), "alpha": sol.alpha.tolist(),
                        "deformation": sol.field.to_dict(), "terms": sol.terms,
                        "eps": None if sol.eps is None else sol.eps.tolist(),
                        "delta": None if sol.delta is None else sol.delta.round().astype(int).tolist()})
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _f(v):
    return v if np.isfinite(v) else None


class Incumbent:
    def __init__(self):
        self.value = np.inf
        self.x = None


# ---------------------------------------------------------------- repair


def round_assignment(model: ConicModel, x: np.ndarray, fixings: dict | None = None) -> np.ndarray | None:
    """Column per control point from fractional P values.

    Rows take their largest allowed entry; in the injective case pairs are
    taken greedily by decreasing value with one row and one column each.
    Fixings are honoured (fixed ones win, fixed zeros are skipped).
    """
    fixings = fixings or {}
    P = model.layout.P
    u, v = P.shape
    val = np.where(P >= 0, x[np.maximum(P, 0)], -np.inf)
    for (i, j) in zip(*np.nonzero(P >= 0)):
        f = fixings.get(int(P[i, j]))
        if f is not None:
            val[i, j] = np.inf if f > 0.5 else -np.inf
    if not model.config.injective:
        if np.any(np.isneginf(val.max(axis=1))):
            return None
        return np.argmax(val, axis=1)
    order = sorted(((-val[i, j], i, j) for i in range(u) for j in range(v) if val[i, j] > -np.inf))
    cols = np.full(u, -1)
    used = np.zeros(v, dtype=bool)
    for _, i, j in order:
        if cols[i] < 0 and not used[j]:
            cols[i] = j
            used[j] = True
    return cols if np.all(cols >= 0) else None


def procrustes(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Rotation R (row-vector convention) minimising ||(src - mean) R - (dst - mean)||."""
    a = src - src.mean(axis=0)
    b = dst - dst.mean(axis=0)
    U, _, Vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def _signed_permutations() -> list[np.ndarray]:
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            Q = np.zeros((3, 3))
            Q[np.arange(3), perm] = signs
            if np.linalg.det(Q) > 0:
                out.append(Q)
    return out


SIGNED_PERMUTATIONS = _signed_permutations()


def nearest_signed_permutation(R: np.ndarray) -> np.ndarray:
    scores = [np.sum(Q * R) for Q in SIGNED_PERMUTATIONS]
    return SIGNED_PERMUTATIONS[int(np.argmax(scores))]


def rotation_candidates(model: ConicModel, x: np.ndarray | None, cols: np.ndarray,
                        outliers: np.ndarray) -> list[np.ndarray]:
    """Rotations whose grid cells seed the Gray bits of a repair attempt."""
    data = model.data
    cands = []
    if x is not None:
        cands.append(np.clip(x[model.layout.R], -1, 1))
    keep = ~outliers
    if keep.sum() >= 3:
        src = data.mesh.vertices[data.control][keep]
        dst = np.array([data.polyhedra[j].vertices[0] for j in cols])[keep]
        R = procrustes(src, dst)
        cands += [R, nearest_signed_permutation(R)]
    cands.append(np.eye(3))
    return cands


def _choose_outliers(model: ConicModel, x: np.ndarray | None, fixings: dict) -> np.ndarray:
    lay = model.layout
    u = len(model.data.control)
    out = np.zeros(u, dtype=bool)
    if lay.delta is None:
        return out
    n_out = model.config.n_out
    vals = np.zeros(u) if x is None else x[lay.delta].copy()
    for i, d in enumerate(lay.delta):
        f = fixings.get(int(d))
        if f is not None:
            vals[i] = np.inf if f > 0.5 else -np.inf
    order = sorted(range(u), key=lambda i: (-vals[i], i))
    for i in order[:n_out]:
        if vals[i] > -np.inf:
            out[i] = True
    return out


def candidate_assignments(model: ConicModel, x: np.ndarray | None, fixings: dict,
                          cols: np.ndarray | None = None) -> list[dict]:
    """Complete binary assignments derived from a (fractional) point."""
    lay = model.layout
    if lay is None:
        # a bare model: plain rounding is the only structure available
        if x is None:
            return []
        a = {int(i): float(np.round(np.clip(x[i], 0, 1))) for i in model.binaries}
        a.update({k: float(v) for k, v in fixings.items()})
        return [a]
    if cols is None:
        if x is None:
            return []
        cols = round_assignment(model, x, fixings)
        if cols is None:
            return []
    outliers = _choose_outliers(model, x, fixings)
    base = {}
    for i, j in enumerate(cols):
        for jj in np.flatnonzero(lay.P[i] >= 0):
            base[int(lay.P[i, jj])] = 1.0 if jj == j else 0.0
    if lay.delta is not None:
        for i, d in enumerate(lay.delta):
            base[int(d)] = 1.0 if outliers[i] else 0.0
    bins = model.config.bins
    code_sets = []
    if x is not None:
        code_sets.append(np.round(np.clip(x[lay.rotation_bits], 0, 1)))
    code_sets += [codes_for_rotation(R, bins) for R in rotation_candidates(model, x, cols, outliers)]
    out = []
    for codes in code_sets:
        a = dict(base)
        for k, idx in np.ndenumerate(lay.rotation_bits):
            a[int(idx)] = float(codes[k])
        a.update({k: float(v) for k, v in fixings.items()})
        if a not in out:
            out.append(a)
    return out


def evaluate_assignment(model: ConicModel, assignment: dict, engine: str,
                        verify_tol: float = 1e-6) -> tuple[float, np.ndarray] | None:
    """Solve with every binary fixed, polish, and verify; None if not feasible."""
    rel = solve_relaxation(model, assignment, engine=engine)
    if not rel.ok:
        return None
    x = polish(model, rel.x, assignment)
    res = model.residuals(x)
    if max(res.values()) > verify_tol:
        logger.debug("repair candidate rejected: %s", res)
        return None
    return model.objective(x), x


def round_and_repair(model: ConicModel, x: np.ndarray, fixings: dict | None = None,
                     engine: str | None = None, cache: dict | None = None,
                     max_candidates: int = 4) -> tuple[float, np.ndarray] | None:
    """Best feasible completion found from a fractional point, or None."""
    engine = engine or default_engine()
    cache = {} if cache is None else cache
    best = None
    for a in candidate_assignments(model, x, fixings or {})[:max_candidates]:
        key = tuple(int(round(a[int(i)])) for i in model.binaries)
        if key not in cache:
            cache[key] = evaluate_assignment(model, a, engine)
        r = cache[key]
        if r is not None and (best is None or r[0] < best[0]):
            best = r
    return best


# ---------------------------------------------------------------- search


def _fractional(model: ConicModel, x: np.ndarray, fixings: dict, tol: float):
    order = model.branch_order
    vals = x[order]
    frac = np.minimum(vals, 1.0 - vals)
    free = np.array([int(i) not in fixings for i in order], dtype=bool)
    frac = np.where(free, frac, 0.0)
    return order, frac, free & (frac > tol)


def _branch_var(model, x, fixings, tol):
    order, frac, mask = _fractional(model, x, fixings, tol)
    if not mask.any():
        return None
    # most fractional; argmax returns the first, i.e. the earliest in branch order
    return int(order[int(np.argmax(np.where(mask, frac, -1.0)))])


def branch_and_bound(model: ConicModel, budget: float | None = None, gap_target: float | None = None,
                     settings: BnBSettings | None = None, start: list | None = None,
                     callback=None) -> SolveResult:
    """Best-first search with most-fractional branching.

    ``start`` optionally lists column assignments (one int per control
    point) tried as initial incumbents. ``callback`` receives each log entry.
    """
    st = settings or BnBSettings()
    if budget is not None:
        st.budget = budget
    if gap_target is not None:
        st.gap_target = gap_target
    engine = st.engine or default_engine()
    t0 = time.monotonic()
    inc = Incumbent()
    cache: dict = {}
    log: list = []
    history: list = []
    nodes = 0
    lower = max(model.structural_lower_bound(), -np.inf)
    state = {"lower": lower}

    def elapsed():
        return time.monotonic() - t0

    def emit():
        e = {"time": elapsed(), "upper": inc.value, "lower": state["lower"],
             "gap": relative_gap(inc.value, state["lower"], st.delta), "nodes": nodes}
        log.append(e)
        logger.info(format_log_line(e))
        if callback:
            callback(e)

    def offer(r):
        if r is not None and r[0] < inc.value:
            inc.value, inc.x = r
            return True
        return False

    def try_key(a):
        key = tuple(int(round(a[int(i)])) for i in model.binaries)
        if key not in cache:
            cache[key] = evaluate_assignment(model, a, engine, st.verify_tol)
        return cache[key]

    for cols in start or []:
        for a in candidate_assignments(model, None, {}, np.asarray(cols))[: st.max_candidates]:
            if offer(try_key(a)):
                emit()

    heap: list[BnBNode] = []
    seq = itertools.count()
    heapq.heappush(heap, BnBNode((lower, 0, next(seq)), {}, lower, 0))
    status = None

    def prunable(bound):
        return bound >= inc.value * (1.0 - st.prune_rel) if inc.value >= 0 else bound >= inc.value

    def refresh_lower(pending=()):
        bounds = [n.bound for n in heap] + list(pending)
        new = min(bounds) if bounds else inc.value
        new = min(new, inc.value)
        if new > state["lower"]:
            state["lower"] = new
            return True
        return False

    pool = ThreadPoolExecutor(st.workers) if st.workers > 1 else None
    try:
        while heap:
            if elapsed() > st.budget:
                status = "time-limit"
                break
            gap = relative_gap(inc.value, state["lower"], st.delta)
            if np.isfinite(inc.value) and gap <= st.gap_target:
                break
            batch = []
            while heap and len(batch) < max(1, st.workers):
                node = heapq.heappop(heap)
                if prunable(node.bound):
                    continue
                batch.append(node)
            if not batch:
                continue
            if pool is None:
                rels = [solve_relaxation(model, n.fixings, engine=engine) for n in batch]
            else:
                rels = list(pool.map(lambda n: solve_relaxation(model, n.fixings, engine=engine), batch))
            for node, rel in zip(batch, rels):
                nodes += 1
                history.append(node.key)
                improved = _process(model, st, node, rel, inc, heap, seq, cache, engine, offer)
                if improved:
                    refresh_lower()
                    emit()
            if refresh_lower():
                emit()
    finally:
        if pool is not None:
            pool.shutdown()

    if status is None:
        if not heap:
            status = "optimal" if np.isfinite(inc.value) else "infeasible"
            if np.isfinite(inc.value) and state["lower"] < inc.value:
                state["lower"] = inc.value
                emit()
        else:
            status = "optimal" if st.gap_target <= OPTIMAL_GAP else "gap-limit"
    gap = relative_gap(inc.value, state["lower"], st.delta)
    sol = decode(model, inc.x) if inc.x is not None and model.layout is not None else None
    if not log or log[-1]["nodes"] != nodes:
        emit()
    return SolveResult(status, inc.x, inc.value, state["lower"], gap, elapsed(), nodes, log, sol, history)


def _process(model, st: BnBSettings, node: BnBNode, rel: RelaxationResult, inc: Incumbent, heap,
             seq, cache, engine, offer) -> bool:
    """Handle one solved node; returns True when the incumbent improved."""
    improved = False
    if rel.status == "infeasible":
        return False
    if rel.status != "optimal":
        bound = node.bound
        var = next((int(i) for i in model.branch_order if int(i) not in node.fixings), None)
        if var is None:
            return False
        for val in (0.0, 1.0):
            fx = dict(node.fixings)
            fx[var] = val
            heapq.heappush(heap, BnBNode((bound, -(node.depth + 1), next(seq)), fx, bound, node.depth + 1))
        return False
    bound = max(rel.bound, node.bound, model.structural_lower_bound())
    if np.isfinite(inc.value) and bound >= inc.value * (1.0 - st.prune_rel):
        return False
    var = _branch_var(model, rel.x, node.fixings, st.int_tol)
    r = round_and_repair(model, rel.x, node.fixings, engine, cache, st.max_candidates)
    improved = offer(r)
    if var is None:
        return improved
    if np.isfinite(inc.value) and bound >= inc.value * (1.0 - st.prune_rel):
        return improved
    for val in (0.0, 1.0):
        fx = dict(node.fixings)
        fx[var] = val
        heapq.heappush(heap, BnBNode((bound, -(node.depth + 1), next(seq)), fx, bound, node.depth + 1))
    return improved
