"""Per-triangle affine deformation: tau_p(x) = (x - c_p)(R + T_p) + c_p + t_p.

Points are row vectors, so a linear map acts from the right. Everything that
enters the optimisation model is affine in (R, T_p, t_p) and is emitted as
sparse rows over a caller supplied variable index space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geometry import TriMesh, face_adjacency


@dataclass(frozen=True, eq=False)
class DeformationField:
    R: np.ndarray  # (3, 3)
    T: np.ndarray  # (f, 3, 3)
    t: np.ndarray  # (f, 3)
    centroids: np.ndarray  # (f, 3)

    @property
    def n_faces(self) -> int:
        return len(self.centroids)

    @classmethod
    def identity(cls, mesh: TriMesh) -> "DeformationField":
        f = mesh.n_faces
        return cls(np.eye(3), np.zeros((f, 3, 3)), np.zeros((f, 3)), mesh.centroids.copy())

    def linear_part(self, p: int) -> np.ndarray:
        return self.R + self.T[p]

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "T": self.T.tolist(), "t": self.t.tolist(),
                "centroids": self.centroids.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationField":
        return cls(np.asarray(d["R"], float), np.asarray(d["T"], float).reshape(-1, 3, 3),
                   np.asarray(d["t"], float).reshape(-1, 3), np.asarray(d["centroids"], float).reshape(-1, 3))


def apply_triangle_transform(field: DeformationField, p: int, x) -> np.ndarray:
    c = field.centroids[p]
    return (np.asarray(x, float) - c) @ (field.R + field.T[p]) + c + field.t[p]


def rigidity_value(field: DeformationField) -> float:
    """Frobenius norm of the stacked linear parts [T_1, ..., T_f]."""
    return float(np.linalg.norm(field.T))


@dataclass(frozen=True)
class DeformationIndex:
    """Variable indices of the deformation unknowns inside a flat vector."""

    R: np.ndarray  # (3, 3) int
    T: np.ndarray  # (f, 3, 3) int
    t: np.ndarray  # (f, 3) int

    @classmethod
    def contiguous(cls, n_faces: int, start: int = 0) -> "DeformationIndex":
        R = start + np.arange(9).reshape(3, 3)
        T = start + 9 + np.arange(9 * n_faces).reshape(n_faces, 3, 3)
        t = start + 9 + 9 * n_faces + np.arange(3 * n_faces).reshape(n_faces, 3)
        return cls(R, T, t)

    @property
    def size(self) -> int:
        return 9 + self.T.size + self.t.size

    def pack(self, field: DeformationField, out: np.ndarray) -> np.ndarray:
        out[self.R] = field.R
        out[self.T] = field.T
        out[self.t] = field.t
        return out

    def unpack(self, x: np.ndarray, centroids: np.ndarray) -> DeformationField:
        return DeformationField(x[self.R].copy(), x[self.T].copy(), x[self.t].copy(), centroids)


@dataclass(frozen=True)
class LinearConstraintBlock:
    """Sparse rows ``A x (= or <=) rhs`` in COO triplet form, tagged by origin."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rhs: np.ndarray
    sense: str  # 'eq' or 'le'
    tag: str

    def __post_init__(self):
        if self.sense not in ("eq", "le"):
            raise ValueError(f"sense must be 'eq' or 'le', got {self.sense!r}")
        if not (np.all(np.isfinite(self.vals)) and np.all(np.isfinite(self.rhs))):
            raise ValueError(f"{self.tag}: non-finite coefficients")

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def matrix(self, n_vars: int) -> sparse.csr_matrix:
        if len(self.cols) and self.cols.max() >= n_vars:
            raise ValueError(f"{self.tag}: reference to undeclared variable {self.cols.max()}")
        return sparse.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n_rows, n_vars))

    @classmethod
    def from_dense_terms(cls, cols, vals, rhs, sense, tag) -> "LinearConstraintBlock":
        """Rows given as equal-length (m, k) arrays of columns and values."""
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        m = cols.shape[0]
        rows = np.repeat(np.arange(m), cols.shape[1]) if cols.ndim == 2 else np.zeros(0, np.int64)
        keep = vals.ravel() != 0
        return cls(rows[keep], cols.ravel()[keep], vals.ravel()[keep], np.asarray(rhs, float).ravel(),
                   sense, tag)

    @classmethod
    def concat(cls, blocks: list["LinearConstraintBlock"], sense: str, tag: str) -> "LinearConstraintBlock":
        rows, cols, vals, rhs = [], [], [], []
        off = 0
        for b in blocks:
            rows.append(b.rows + off)
            cols.append(b.cols)
            vals.append(b.vals)
            rhs.append(b.rhs)
            off += b.n_rows
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
        return cls(cat(rows, np.int64), cat(cols, np.int64), cat(vals, float), cat(rhs, float), sense, tag)


def transform_terms(index: DeformationIndex, faces, points, centroids):
    """Affine coefficients of tau_p(x) for many (p, x) pairs.

    Returns ``cols`` and ``vals`` of shape (N, 3, 7) and ``const`` (N, 3):
    component k of tau_p(x) equals ``vals[n, k] @ vars[cols[n, k]] + const[n, k]``.
    """
    faces = np.asarray(faces, dtype=np.int64)
    x = np.atleast_2d(np.asarray(points, float))
    c = centroids[faces]
    dx = x - c  # (N, 3)
    N = len(faces)
    cols = np.empty((N, 3, 7), dtype=np.int64)
    vals = np.empty((N, 3, 7))
    for k in range(3):
        cols[:, k, 0:3] = index.R[:, k][None, :]
        cols[:, k, 3:6] = index.T[faces][:, :, k]
        cols[:, k, 6] = index.t[faces, k]
        vals[:, k, 0:3] = dx
        vals[:, k, 3:6] = dx
        vals[:, k, 6] = 1.0
    return cols, vals, c.copy()


def consistency_constraints(mesh: TriMesh, index: DeformationIndex) -> LinearConstraintBlock:
    """tau_p(X_i) = tau_q(X_i) along a chain through each vertex's incident faces.

    Faces of N_i are chained in increasing index order; equality along the
    chain implies equality for every pair by transitivity.
    """
    vert, fp, fq = [], [], []
    for i, nf in enumerate(mesh.vertex_faces):
        if len(nf) > 1:
            vert.extend([i] * (len(nf) - 1))
            fp.extend(nf[:-1])
            fq.extend(nf[1:])
    if not vert:
        return LinearConstraintBlock(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0),
                                     np.zeros(0), "eq", "consistency")
    x = mesh.vertices[vert]
    cp, vp, kp = transform_terms(index, fp, x, mesh.centroids)
    cq, vq, kq = transform_terms(index, fq, x, mesh.centroids)
    cols = np.concatenate([cp, cq], axis=2).reshape(-1, 14)
    vals = np.concatenate([vp, -vq], axis=2).reshape(-1, 14)
    rhs = (kq - kp).reshape(-1)
    return _merge_duplicates(LinearConstraintBlock.from_dense_terms(cols, vals, rhs, "eq", "consistency"))


def _merge_duplicates(block: LinearConstraintBlock) -> LinearConstraintBlock:
    # the R columns appear once for p and once for q; sum them
    m = sparse.coo_matrix((block.vals, (block.rows, block.cols)),
                          shape=(block.n_rows, int(block.cols.max(initial=0)) + 1)).tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    m = m.tocoo()
    return LinearConstraintBlock(m.row.astype(np.int64), m.col.astype(np.int64), m.data,
                                 block.rhs, block.sense, block.tag)


@dataclass(frozen=True)
class SmoothnessTerms:
    """Residuals Delta_e = tau_p(c_q) - (c_q + t_q), one per ordered pair (p, q).

    ``cols``/``vals`` have shape (E, 3, 8), ``const`` (E, 3); ``weights``
    sum to 1 over the emitted terms.
    """

    pairs: np.ndarray
    weights: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    const: np.ndarray

    def __len__(self):
        return len(self.pairs)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ekj,ekj->ek", self.vals, x[self.cols]) + self.const


def smoothness_terms(mesh: TriMesh, index: DeformationIndex, both_orientations: bool = True) -> SmoothnessTerms:
    adj = face_adjacency(mesh)
    pairs, lengths = adj.pairs, adj.lengths
    if both_orientations and len(pairs):
        pairs = np.concatenate([pairs, pairs[:, ::-1]])
        lengths = np.concatenate([lengths, lengths])
    if len(pairs) == 0:
        z = np.zeros((0, 3, 8))
        return SmoothnessTerms(pairs.reshape(0, 2), np.zeros(0), z.astype(np.int64), z, np.zeros((0, 3)))
    weights = lengths / lengths.sum()
    p, q = pairs[:, 0], pairs[:, 1]
    c = mesh.centroids
    cols, vals, const = transform_terms(index, p, c[q], c)
    cols = np.concatenate([cols, index.t[q][:, :, None]], axis=2)
    vals = np.concatenate([vals, -np.ones((len(q), 3, 1))], axis=2)
    const = const - c[q]
    return SmoothnessTerms(pairs, weights, cols, vals, const)


def deform_mesh(mesh: TriMesh, field: DeformationField, policy: str = "min") -> tuple[TriMesh, float]:
    """Map each vertex with one of its incident faces' transforms.

    ``policy`` picks the lowest ('min') or highest ('max') face index. The
    second return value is the largest disagreement between any two incident
    faces' images of a vertex.
    """
    if field.n_faces != mesh.n_faces:
        raise ValueError("field was built for a different mesh")
    out = mesh.vertices.copy()
    worst = 0.0
    A = field.R[None] + field.T
    for i, nf in enumerate(mesh.vertex_faces):
        if len(nf) == 0:
            continue
        x = mesh.vertices[i]
        imgs = np.einsum("j,pjk->pk", x, A[nf]) - np.einsum("pj,pjk->pk", field.centroids[nf], A[nf]) \
            + field.centroids[nf] + field.t[nf]
        out[i] = imgs[0] if policy == "min" else imgs[-1]
        if len(nf) > 1:
            worst = max(worst, float(np.linalg.norm(imgs[:, None] - imgs[None], axis=2).max()))
    return TriMesh(out, mesh.faces), worst
