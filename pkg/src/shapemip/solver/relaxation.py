"""Continuous relaxation of a ConicModel under partial binary fixings."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from ..model.conic import ConicModel
from .ipm import ConeDims, IPMSettings, solve_socp

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-7


@dataclass
class RelaxationResult:
    status: str  # optimal | infeasible | numerical
    objective: float
    bound: float
    x: np.ndarray | None
    residuals: dict = field(default_factory=dict)
    iters: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class StandardForm:
    """``min c'z + offset`` over the free columns, with Az = b and Gz + s = h, s in K."""

    c: np.ndarray
    A: sparse.csr_matrix
    b: np.ndarray
    G: sparse.csr_matrix
    h: np.ndarray
    dims: ConeDims
    offset: float
    free: np.ndarray
    x_fixed: np.ndarray  # full-length vector holding the fixed values

    def expand(self, z: np.ndarray) -> np.ndarray:
        x = self.x_fixed.copy()
        x[self.free] = z
        return x


def default_engine() -> str:
    """'clarabel' when the package is importable, else the built-in method."""
    try:
        import clarabel  # noqa: F401
    except ImportError:
        return "ipm"
    return "clarabel"


class PresolveInfeasible(Exception):
    pass


def fixed_bounds(model: ConicModel, fixings: dict | None) -> tuple[np.ndarray, np.ndarray]:
    lb, ub = model.lb.copy(), model.ub.copy()
    for i, v in (fixings or {}).items():
        if not model.is_binary[i]:
            raise ValueError(f"variable {i} is not binary and cannot be fixed")
        lb[i] = ub[i] = float(v)
    return lb, ub


def standard_form(model: ConicModel, fixings: dict | None = None, tol: float = 1e-9) -> StandardForm:
    """Eliminate fixed columns, drop empty rows, and stack bounds and cones into K."""
    lb, ub = fixed_bounds(model, fixings)
    if np.any(lb > ub):
        raise PresolveInfeasible("crossing bounds")
    fixed = lb == ub
    free = np.flatnonzero(~fixed)
    xf = np.where(fixed, lb, 0.0)

    def reduce(M, rhs):
        Mf = M[:, free]
        r = rhs - M @ xf
        nnz = np.diff(Mf.tocsr().indptr)
        return Mf.tocsr(), r, nnz > 0

    A, b, keep = reduce(model.A_eq, model.b_eq)
    if np.any(np.abs(b[~keep]) > tol):
        raise PresolveInfeasible("equality row with no free variable is violated")
    A, b = A[keep], b[keep]
    L, hl, keep = reduce(model.A_le, model.b_le)
    if np.any(hl[~keep] < -tol):
        raise PresolveInfeasible("inequality row with no free variable is violated")
    L, hl = L[keep], hl[keep]

    nf = len(free)
    flb, fub = lb[free], ub[free]
    has_lb, has_ub = np.isfinite(flb), np.isfinite(fub)
    eye = sparse.identity(nf, format="csr")
    G_parts = [L, -eye[has_lb], eye[has_ub]]
    h_parts = [hl, -flb[has_lb], fub[has_ub]]
    l = L.shape[0] + int(has_lb.sum()) + int(has_ub.sum())
    pos = np.full(model.n_vars, -1)
    pos[free] = np.arange(nf)
    q = []
    for cone in model.cones:
        t = pos[cone.epigraph]
        F = cone.F[:, free]
        g = cone.g + cone.F @ xf
        head = sparse.csr_matrix(([-1.0], ([0], [t])), shape=(1, nf))
        G_parts.append(sparse.vstack([head, -F], format="csr"))
        h_parts.append(np.concatenate([[0.0], g]))
        q.append(1 + F.shape[0])
    # a one-dimensional cone is an orthant row; move those into the orthant block
    soc_parts, soc_h, soc_q = [], [], []
    lin_parts, lin_h = [], []
    for Gp, hp, d in zip(G_parts[3:], h_parts[3:], q):
        if d == 1:
            lin_parts.append(Gp)
            lin_h.append(hp)
        else:
            soc_parts.append(Gp)
            soc_h.append(hp)
            soc_q.append(d)
    G = sparse.vstack(G_parts[:3] + lin_parts + soc_parts, format="csr")
    h = np.concatenate(h_parts[:3] + lin_h + soc_h)
    dims = ConeDims(l + len(lin_parts), tuple(soc_q))
    c = model.c[free]
    offset = float(model.c0 + model.c @ xf)
    return StandardForm(c, A, b, G, h, dims, offset, free, xf)


def solve_relaxation(model: ConicModel, fixings: dict | None = None,
                     settings: IPMSettings | None = None, engine: str | None = None) -> RelaxationResult:
    """Solve the continuous relaxation (binaries in [0, 1]) with the given fixings."""
    try:
        sf = standard_form(model, fixings)
    except PresolveInfeasible as exc:
        logger.debug("presolve: %s", exc)
        return RelaxationResult("infeasible", np.inf, np.inf, None)
    engine = engine or default_engine()
    if engine == "clarabel":
        res = _solve_clarabel(sf)
    else:
        res = solve_socp(sf.c, sf.G, sf.h, sf.dims, sf.A, sf.b, settings)
    if res.status == "infeasible":
        return RelaxationResult("infeasible", np.inf, np.inf, None, iters=res.iters)
    if res.status not in ("optimal", "inaccurate"):
        # an unbounded relaxation cannot happen with the box on every deformation unknown
        return RelaxationResult("numerical", np.nan, -np.inf, None, iters=res.iters)
    x = sf.expand(res.x)
    obj = model.objective(x)
    bound = min(res.pobj, res.dobj) + sf.offset
    return RelaxationResult("optimal", obj, bound, x, model.residuals(x), res.iters)


def _solve_clarabel(sf: StandardForm):
    import clarabel

    from .ipm import IPMResult

    P = sparse.csc_matrix((len(sf.c), len(sf.c)))
    Acl = sparse.vstack([sf.A, sf.G], format="csc")
    bcl = np.concatenate([sf.b, sf.h])
    cones = []
    if sf.A.shape[0]:
        cones.append(clarabel.ZeroConeT(sf.A.shape[0]))
    if sf.dims.l:
        cones.append(clarabel.NonnegativeConeT(sf.dims.l))
    cones += [clarabel.SecondOrderConeT(d) for d in sf.dims.q]
    st = clarabel.DefaultSettings()
    st.verbose = False
    sol = clarabel.DefaultSolver(P, sf.c, Acl, bcl, cones, st).solve()
    name = str(sol.status)
    status = "optimal" if name in ("Solved", "AlmostSolved") else \
        "infeasible" if "PrimalInfeasible" in name else "numerical"
    x = np.asarray(sol.x)
    p = sf.A.shape[0]
    z = np.asarray(sol.z)
    y = z[:p]
    return IPMResult(status, x, y, z[p:], np.asarray(sol.s)[p:], float(sol.obj_val),
                     float(getattr(sol, "obj_val_dual", sol.obj_val)), int(sol.iterations), 0.0, 0.0, 0.0)


def polish(model: ConicModel, x: np.ndarray, fixings: dict | None = None,
           active_tol: float = 1e-6, accept_tol: float = 1e-9) -> np.ndarray:
    """Snap an interior-point solution onto its active constraints.

    Cones whose norm is below ``active_tol`` get their affine part set to
    zero, nearly tight inequalities and bounds become equalities, and the
    smallest correction satisfying all of that is computed. The result is
    returned only if it is feasible to ``accept_tol`` and not worse;
    otherwise ``x`` is returned with its epigraphs tightened.
    """
    base = model.tighten_epigraphs(x)
    lb, ub = fixed_bounds(model, fixings)
    n = model.n_vars
    rows, rhs = [model.A_eq], [model.b_eq]
    if model.A_le.shape[0]:
        slack = model.b_le - model.A_le @ x
        act = slack <= active_tol
        rows.append(model.A_le[act])
        rhs.append(model.b_le[act])
    for cone in model.cones:
        if cone.F.shape[0] and cone.value(x) <= active_tol:
            rows.append(cone.F)
            rhs.append(-cone.g)
    at_lb = np.isfinite(lb) & (x - lb <= active_tol)
    at_ub = np.isfinite(ub) & (ub - x <= active_tol) & ~at_lb
    pinned = np.flatnonzero(at_lb | at_ub)
    rows.append(sparse.identity(n, format="csr")[pinned])
    rhs.append(np.where(at_lb, lb, ub)[pinned])
    C = sparse.vstack(rows, format="csr")
    r = np.concatenate(rhs) - C @ x
    if C.shape[0] == 0 or np.abs(r).max() == 0:
        return base
    try:
        d = _min_norm_correction(C, r)
    except RuntimeError:
        return base
    y = x + d
    # the box is kept exactly even where the projection drifted
    y = np.clip(y, lb, ub)
    y = model.tighten_epigraphs(y)
    res = model.residuals(y)
    res.pop("integrality", None)
    if max(res.values(), default=0.0) <= accept_tol and model.objective(y) <= model.objective(base) + accept_tol:
        return y
    return base


def _min_norm_correction(C: sparse.csr_matrix, r: np.ndarray, reg: float = 1e-13) -> np.ndarray:
    m, n = C.shape
    K = sparse.bmat([[sparse.identity(n), C.T], [C, -reg * sparse.identity(m)]], format="csc")
    lu = spla.splu(K, permc_spec="COLAMD")
    rhs = np.concatenate([np.zeros(n), r])
    sol = lu.solve(rhs)
    Kt = sparse.bmat([[sparse.identity(n), C.T], [C, None]], format="csr")
    for _ in range(5):
        res = rhs - Kt @ sol
        if np.abs(res).max() < 1e-15:
            break
        sol = sol + lu.solve(res)
    return sol[:n]
