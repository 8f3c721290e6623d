"""Assembly of the matching problem as a mixed-integer SOCP.

Variables: assignment binaries P (mask-allowed entries only), convex
weights alpha per (control point, polyhedron vertex) pair, the rotation
block, per-face linear parts T and translations t, optional outlier
offsets eps with indicators delta, and one epigraph scalar per norm term.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ..deformation import (DeformationField, DeformationIndex, consistency_constraints,
                           smoothness_terms, transform_terms)
from ..geometry import TriMesh
from ..polyhedra import ConvexPolyhedron
from .conic import ConicModel, ModelBuilder, ModelError
from .so3 import build_so3_block, check_bins, rotation_completion


@dataclass
class MatchConfig:
    lambda_c: float = 4.0
    lambda_r: float = 1.0
    lambda_s: float = 0.5
    bins: int = 4
    big_m: float = 0.2
    n_out: int = 0
    injective: bool = False
    distortion_bound: float | None = None
    deform_bound: float = 10.0
    both_orientations: bool = True

    def validate(self) -> None:
        for name in ("lambda_c", "lambda_r", "lambda_s"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be non-negative")
        check_bins(self.bins)
        if self.n_out < 0:
            raise ModelError("n_out must be non-negative")
        if self.n_out > 0 and not self.big_m > 0:
            raise ModelError("big_m must be positive when outliers are enabled")
        if not self.deform_bound > 0:
            raise ModelError("deform_bound must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ProblemData:
    """Everything the model needs about the two shapes.

    ``control`` indexes source vertices (u of them); ``polyhedra`` holds one
    patch per target control point (v of them). ``geo_x`` (u, u) and
    ``geo_y`` (v, v) are control-point geodesics, needed only for the
    distortion rows.
    """

    mesh: TriMesh
    control: np.ndarray
    polyhedra: list[ConvexPolyhedron]
    mask: np.ndarray | None = None
    geo_x: np.ndarray | None = None
    geo_y: np.ndarray | None = None

    @property
    def u(self) -> int:
        return len(self.control)

    @property
    def v(self) -> int:
        return len(self.polyhedra)

    @property
    def allowed(self) -> np.ndarray:
        if self.mask is None:
            return np.ones((self.u, self.v), dtype=bool)
        return np.asarray(getattr(self.mask, "allowed", self.mask), dtype=bool)


@dataclass
class VariableLayout:
    P: np.ndarray  # (u, v), -1 where the mask forbids the entry
    alpha: np.ndarray  # (u, d), -1 where the owning P entry is forbidden
    offsets: np.ndarray  # (v + 1,) start of polyhedron j within the d columns
    so3: dict
    deform: DeformationIndex
    faces: np.ndarray  # designated face per control point
    s_c: int
    s_r: int
    s_s: int
    eps: np.ndarray | None = None
    delta: np.ndarray | None = None
    smooth: object = None
    weights: dict = field(default_factory=dict)

    @property
    def R(self) -> np.ndarray:
        return self.so3["R"]

    @property
    def rotation_bits(self) -> np.ndarray:
        return self.so3["bits"]


@dataclass(frozen=True, eq=False)
class Solution:
    """Decoded variable vector in shape terms."""

    P: np.ndarray
    alpha: np.ndarray
    field: DeformationField
    eps: np.ndarray | None
    delta: np.ndarray | None
    terms: dict

    @property
    def matches(self) -> np.ndarray:
        return np.argmax(self.P, axis=1)

    @property
    def outliers(self) -> np.ndarray:
        if self.delta is None:
            return np.zeros(len(self.P), dtype=bool)
        return self.delta > 0.5


def designated_faces(mesh: TriMesh, control: np.ndarray) -> np.ndarray:
    faces = []
    for i in control:
        nf = mesh.vertex_faces[int(i)]
        if len(nf) == 0:
            raise ModelError(f"control point {int(i)} has no adjacent face")
        faces.append(int(nf[0]))
    return np.asarray(faces, dtype=np.int64)


def norm_weights(config: MatchConfig, u: int, f: int, n_smooth: int) -> dict:
    """Per-term weights lambda / sqrt(number of entries under the norm)."""
    return {
        "corr": config.lambda_c / np.sqrt(3 * u),
        "rigid": config.lambda_r / np.sqrt(9 * f),
        "smooth": config.lambda_s / np.sqrt(3 * n_smooth) if n_smooth else 0.0,
    }


def _add_assignment(mb: ModelBuilder, data: ProblemData) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u, v = data.u, data.v
    allowed = data.allowed
    if allowed.shape != (u, v):
        raise ModelError(f"mask shape {allowed.shape} does not match (u, v) = ({u}, {v})")
    empty = np.flatnonzero(~allowed.any(axis=1))
    if len(empty):
        raise ModelError(f"control point {empty[0]} has no allowed match")
    sizes = np.array([p.d for p in data.polyhedra], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    P = np.full((u, v), -1, dtype=np.int64)
    ii, jj = np.nonzero(allowed)
    P[ii, jj] = mb.add_var("P", (len(ii),), kind="binary")
    alpha = np.full((u, offsets[-1]), -1, dtype=np.int64)
    n_alpha = int(sizes[jj].sum())
    idx = iter(mb.add_var("alpha", (n_alpha,), lb=0.0, ub=1.0))
    for i, j in zip(ii, jj):
        for m in range(offsets[j], offsets[j + 1]):
            alpha[i, m] = next(idx)
    return P, alpha, offsets


def _combination_rows(mb: ModelBuilder, P, alpha, offsets) -> None:
    u, v = P.shape
    eq, le = [], []
    for i in range(u):
        a = alpha[i][alpha[i] >= 0]
        eq.append((list(a), [1.0] * len(a), 1.0))
        for j in np.flatnonzero(P[i] >= 0):
            block = list(alpha[i, offsets[j]:offsets[j + 1]])
            le.append((block + [P[i, j]], [1.0] * len(block) + [-1.0], 0.0))
    for m in range(alpha.shape[1]):
        col = alpha[:, m][alpha[:, m] >= 0]
        if len(col) > 1:
            le.append((list(col), [1.0] * len(col), 1.0))
    mb.rows(eq, "eq", "combination")
    mb.rows(le, "le", "combination")
    mb.rows([(list(P[i][P[i] >= 0]), [1.0] * int((P[i] >= 0).sum()), 1.0) for i in range(u)],
            "eq", "assignment")


def _correspondence_cone(mb, data, layout_parts, eps) -> None:
    R, T, t, faces, alpha, offsets, s_c = layout_parts
    mesh = data.mesh
    index = DeformationIndex(R, T, t)
    x = mesh.vertices[data.control]
    cols, vals, const = transform_terms(index, faces, x, mesh.centroids)
    Z = np.concatenate([p.vertices for p in data.polyhedra], axis=0)  # (d, 3)
    rows_, cols_, vals_, g = [], [], [], []
    r = 0
    for i in range(data.u):
        a = np.flatnonzero(alpha[i] >= 0)
        for k in range(3):
            rows_ += [r] * 7
            cols_ += list(cols[i, k])
            vals_ += list(vals[i, k])
            rows_ += [r] * len(a)
            cols_ += list(alpha[i, a])
            vals_ += list(-Z[a, k])
            if eps is not None:
                rows_.append(r)
                cols_.append(eps[i, k])
                vals_.append(1.0)
            g.append(const[i, k])
            r += 1
    mb.add_cone(s_c, rows_, cols_, vals_, g, "correspondence")


def _regularizer_cones(mb, mesh, index: DeformationIndex, s_r, s_s, both: bool):
    T = index.T.ravel()
    mb.add_cone(s_r, np.arange(len(T)), T, np.ones(len(T)), np.zeros(len(T)), "rigidity")
    sm = smoothness_terms(mesh, index, both_orientations=both)
    E = len(sm)
    if E:
        rows = np.repeat(np.arange(3 * E), sm.cols.shape[2])
        vals = (sm.vals * sm.weights[:, None, None]).ravel()
        g = (sm.const * sm.weights[:, None]).ravel()
        keep = vals != 0
        mb.add_cone(s_s, rows[keep], sm.cols.ravel()[keep], vals[keep], g, "smoothness")
    else:
        mb.add_cone(s_s, [], [], [], [], "smoothness")
    return sm


def add_outlier_block(mb: ModelBuilder, u: int, config: MatchConfig):
    """eps in the big-M box switched by delta, and at most n_out outliers."""
    if config.n_out >= u:
        warnings.warn(f"n_out = {config.n_out} >= u = {u}: every point may be rejected", stacklevel=3)
    M = config.big_m
    eps = mb.add_var("eps", (u, 3), lb=-M, ub=M)
    delta = mb.add_var("delta", (u,), kind="binary")
    le = []
    for i in range(u):
        for k in range(3):
            le.append(([eps[i, k], delta[i]], [1.0, -M], 0.0))
            le.append(([eps[i, k], delta[i]], [-1.0, -M], 0.0))
    le.append((list(delta), [1.0] * u, float(config.n_out)))
    mb.rows(le, "le", "outlier")
    return eps, delta


def add_injectivity(mb: ModelBuilder, P: np.ndarray) -> None:
    u, v = P.shape
    if u > v:
        raise ModelError(f"injectivity needs u <= v, got u = {u}, v = {v}")
    rows = []
    for j in range(v):
        col = P[:, j][P[:, j] >= 0]
        if len(col) > 1:
            rows.append((list(col), [1.0] * len(col), 1.0))
    mb.rows(rows, "le", "injectivity")


def distortion_pairs(P: np.ndarray, geo_x, geo_y, bound: float | None) -> list[tuple[int, int, int, int]]:
    """Quadruples (s, t, p, q), s < p, whose joint selection distorts geodesics beyond ``bound``."""
    if bound is None or not np.isfinite(bound):
        return []
    if geo_x is None or geo_y is None:
        raise ModelError("distortion rows need geodesics on both shapes")
    geo_x = np.asarray(geo_x, float)
    geo_y = np.asarray(geo_y, float)
    u, v = P.shape
    out = []
    for s in range(u):
        for p in range(s + 1, u):
            ts = np.flatnonzero(P[s] >= 0)
            qs = np.flatnonzero(P[p] >= 0)
            bad = np.abs(geo_x[s, p] - geo_y[np.ix_(ts, qs)]) > bound
            for a, b in zip(*np.nonzero(bad)):
                out.append((s, int(ts[a]), p, int(qs[b])))
    return out


def add_distortion(mb: ModelBuilder, P: np.ndarray, geo_x, geo_y, bound) -> int:
    quads = distortion_pairs(P, geo_x, geo_y, bound)
    mb.rows([([P[s, t], P[p, q]], [1.0, 1.0], 1.0) for s, t, p, q in quads], "le", "distortion")
    return len(quads)


def assemble(data: ProblemData, config: MatchConfig | None = None) -> ConicModel:
    """Build the full model; see the module docstring for the variable set."""
    config = MatchConfig() if config is None else config
    config.validate()
    mesh = data.mesh
    if not isinstance(mesh, TriMesh):
        raise ModelError("the source shape must be a triangle mesh")
    if data.u < 1 or data.v < 1:
        raise ModelError("need at least one control point on each shape")
    data = ProblemData(mesh, np.asarray(data.control, dtype=np.int64), list(data.polyhedra),
                       data.mask, data.geo_x, data.geo_y)
    faces = designated_faces(mesh, data.control)
    mb = ModelBuilder()
    P, alpha, offsets = _add_assignment(mb, data)
    so3 = build_so3_block(mb, config.bins)
    f = mesh.n_faces
    B = config.deform_bound
    T = mb.add_var("T", (f, 3, 3), lb=-B, ub=B)
    t = mb.add_var("t", (f, 3), lb=-B, ub=B)
    index = DeformationIndex(so3["R"], T, t)
    s_c = mb.add_var("s_corr", lb=0.0)
    s_r = mb.add_var("s_rigid", lb=0.0)
    s_s = mb.add_var("s_smooth", lb=0.0)
    eps = delta = None
    if config.n_out > 0:
        eps, delta = add_outlier_block(mb, data.u, config)

    _combination_rows(mb, P, alpha, offsets)
    mb.add_rows(consistency_constraints(mesh, index))
    _correspondence_cone(mb, data, (so3["R"], T, t, faces, alpha, offsets, s_c), eps)
    sm = _regularizer_cones(mb, mesh, index, s_r, s_s, config.both_orientations)
    if config.injective:
        add_injectivity(mb, P)
    add_distortion(mb, P, data.geo_x, data.geo_y, config.distortion_bound)

    weights = norm_weights(config, data.u, f, len(sm))
    mb.add_objective(s_c, weights["corr"])
    mb.add_objective(s_r, weights["rigid"])
    mb.add_objective(s_s, weights["smooth"])

    order = [so3["bits"].ravel(), P[P >= 0]]
    if delta is not None:
        order.append(delta)
    layout = VariableLayout(P, alpha, offsets, so3, index, faces, int(s_c), int(s_r), int(s_s),
                            eps, delta, sm, weights)
    model = mb.build(layout, data, config, np.concatenate(order))
    model.check_structure()
    return model


def decode(model: ConicModel, x: np.ndarray) -> Solution:
    lay: VariableLayout = model.layout
    x = np.asarray(x, float)
    P = np.where(lay.P >= 0, x[np.maximum(lay.P, 0)], 0.0)
    alpha = np.where(lay.alpha >= 0, x[np.maximum(lay.alpha, 0)], 0.0)
    fld = lay.deform.unpack(x, model.data.mesh.centroids)
    terms = {c.tag: c.value(x) for c in model.cones}
    eps = x[lay.eps] if lay.eps is not None else None
    delta = x[lay.delta] if lay.delta is not None else None
    return Solution(P, alpha, fld, eps, delta, terms)


def encode(model: ConicModel, matches, Rm, field_: DeformationField | None = None,
           alpha_rows: dict | None = None, outliers=None) -> np.ndarray:
    """Variable vector from a shape-level description (used to build known points).

    ``matches[i]`` is the polyhedron of control point i; alpha defaults to
    the anchor row of that polyhedron. Epigraphs are set to the exact norms
    and eps to the residual of outlier points.
    """
    lay: VariableLayout = model.layout
    data: ProblemData = model.data
    x = np.zeros(model.n_vars)
    for i, v in rotation_completion(Rm, model.config.bins, lay.so3).items():
        x[i] = v
    mesh = data.mesh
    if field_ is None:
        # the global rotation x -> x R written per face, so consistency holds
        f, c, Rm = mesh.n_faces, mesh.centroids, np.asarray(Rm, float)
        field_ = DeformationField(Rm, np.zeros((f, 3, 3)), c @ Rm - c, c)
    x[lay.deform.T] = field_.T
    x[lay.deform.t] = field_.t
    for i, j in enumerate(matches):
        if lay.P[i, j] < 0:
            raise ModelError(f"match ({i}, {j}) is not allowed by the mask")
        x[lay.P[i, j]] = 1.0
        row = np.zeros(data.polyhedra[j].d) if alpha_rows is None or i not in alpha_rows else None
        if row is None:
            row = np.asarray(alpha_rows[i], float)
        else:
            row[0] = 1.0
        x[lay.alpha[i, lay.offsets[j]:lay.offsets[j + 1]]] = row
    if lay.delta is not None and outliers is not None:
        x[lay.delta[np.asarray(outliers, dtype=np.int64)]] = 1.0
        corr = next(c for c in model.cones if c.tag == "correspondence")
        r = (corr.F @ x + corr.g).reshape(-1, 3)
        for i in outliers:
            x[lay.eps[i]] = -r[i]
    return model.tighten_epigraphs(x)
