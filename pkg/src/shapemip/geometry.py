"""Triangle meshes, point clouds and the graph machinery built on them.

Geodesics are shortest paths on the vertex graph (edge weights are Euclidean
edge lengths). That is an approximation of the true surface geodesic, but it
is deterministic and good enough for sampling and feature extraction.
"""
from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Invalid or unreadable geometry."""


class DecimationWarning(UserWarning):
    """Vertex clustering could not get within a factor 2 of the face target."""


@dataclass(frozen=True)
class VertexGraph:
    """Symmetric weighted adjacency over vertices (CSR, weights = edge lengths)."""

    adjacency: sparse.csr_matrix

    def __post_init__(self):
        if self.adjacency.shape[0] != self.adjacency.shape[1]:
            raise ShapeError("adjacency must be square")
        if self.adjacency.nnz and self.adjacency.data.min() < 0:
            raise ShapeError("edge weights must be non-negative")

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def n_components(self) -> int:
        return int(csgraph.connected_components(self.adjacency, directed=False)[0])

    def neighbours(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    @classmethod
    def from_edges(cls, edges: np.ndarray, points: np.ndarray) -> "VertexGraph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        n = len(points)
        w = np.linalg.norm(points[edges[:, 0]] - points[edges[:, 1]], axis=1)
        # csgraph treats stored zeros as missing edges; keep coincident points connected
        w = np.maximum(w, 1e-300)
        a = sparse.coo_matrix((w, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
        a = a.maximum(a.T).tocsr()
        return cls(a)


@dataclass(frozen=True)
class FaceAdjacency:
    """Unordered pairs (p, q), p < q, of faces sharing an edge, with the edge length."""

    pairs: np.ndarray  # (|E|, 2)
    lengths: np.ndarray  # (|E|,)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh with ``vertices`` (n, 3) and ``faces`` (f, 3).

    Validation happens on construction: indices in range, three distinct
    indices per face and no edge shared by more than two faces.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise ShapeError(f"vertices must be a non-empty (n, 3) array, got shape {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ShapeError(f"faces must be an (f, 3) array, got shape {f.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("vertices contain non-finite coordinates")
        if len(f):
            bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
            if len(bad):
                raise ShapeError(
                    f"face {bad[0]}: vertex index out of range (n_vertices={len(v)})")
            rep = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
            if len(rep):
                raise ShapeError(f"face {rep[0]} repeats a vertex index: {f[rep[0]].tolist()}")
            _, counts = np.unique(_sorted_face_edges(f), axis=0, return_counts=True)
            if counts.max() > 2:
                raise ShapeError("an edge is shared by more than two faces (non-manifold)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (i < j)."""
        return np.unique(_sorted_face_edges(self.faces), axis=0)

    @cached_property
    def graph(self) -> VertexGraph:
        return VertexGraph.from_edges(self.edges, self.vertices)

    @cached_property
    def centroids(self) -> np.ndarray:
        return triangle_centroids(self)

    @cached_property
    def vertex_faces(self) -> list[np.ndarray]:
        """``vertex_faces[i]`` is the sorted array N_i of faces incident to vertex i."""
        order = np.argsort(self.faces.ravel(), kind="stable")
        verts = self.faces.ravel()[order]
        face_ids = order // 3
        bounds = np.searchsorted(verts, np.arange(self.n_vertices + 1))
        return [np.sort(face_ids[bounds[i]:bounds[i + 1]]) for i in range(self.n_vertices)]

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unnormalised face normals (length = twice the face area)."""
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return np.cross(b - a, c - a)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points with a symmetrised k-nearest-neighbour graph."""

    points: np.ndarray
    k: int = 3

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3 or len(p) == 0:
            raise ShapeError(f"points must be a non-empty (n, 3) array, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ShapeError("points contain non-finite coordinates")
        if self.k < 1:
            raise ShapeError("k must be >= 1")
        object.__setattr__(self, "points", p)

    @property
    def vertices(self) -> np.ndarray:
        return self.points

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @cached_property
    def neighbours(self) -> list[np.ndarray]:
        a = self.graph.adjacency
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.n_vertices)]

    @cached_property
    def graph(self) -> VertexGraph:
        n = self.n_vertices
        k = min(self.k, n - 1)
        if k == 0:
            return VertexGraph(sparse.csr_matrix((n, n)))
        _, idx = cKDTree(self.points).query(self.points, k=k + 1)
        rows = np.repeat(np.arange(n), k)
        # column 0 is the point itself (or a duplicate at distance 0)
        cols = idx[:, 1:].ravel()
        keep = rows != cols
        return VertexGraph.from_edges(np.column_stack([rows[keep], cols[keep]]), self.points)


Shape = TriMesh | PointCloud


def _sorted_face_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return np.sort(e, axis=1)


# --------------------------------------------------------------------------- I/O


def _data_lines(text: str):
    """Yield (line_number, tokens) for non-empty, non-comment lines."""
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def _triangulate(poly: list[int]) -> list[list[int]]:
    return [[poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1)]


def _parse_off(text: str, path) -> tuple[np.ndarray, np.ndarray]:
    lines = list(_data_lines(text))
    if not lines or not lines[0][1][0].upper().endswith("OFF"):
        raise ShapeError(f"{path}: missing OFF header")
    head = lines[0][1][1:]
    pos = 1
    if not head:
        if len(lines) < 2:
            raise ShapeError(f"{path}: missing element counts")
        head = lines[1][1]
        pos = 2
    try:
        nv, nf = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise ShapeError(f"{path}: line {lines[pos - 1][0]}: bad element counts {head}") from None
    if len(lines) < pos + nv + nf:
        raise ShapeError(f"{path}: expected {nv} vertices and {nf} faces, file is truncated")
    verts = np.empty((nv, 3))
    for k in range(nv):
        no, tok = lines[pos + k]
        try:
            verts[k] = [float(t) for t in tok[:3]]
        except ValueError:
            raise ShapeError(f"{path}: line {no}: cannot parse vertex {k}") from None
    faces = []
    for k in range(nf):
        no, tok = lines[pos + nv + k]
        try:
            cnt = int(tok[0])
            idx = [int(t) for t in tok[1:1 + cnt]]
        except ValueError:
            raise ShapeError(f"{path}: line {no}: cannot parse face {k}") from None
        if len(idx) != cnt or cnt < 3:
            raise ShapeError(f"{path}: line {no}: face {k} has {len(idx)} indices, expected {cnt} >= 3")
        for i in idx:
            if not 0 <= i < nv:
                raise ShapeError(f"{path}: line {no}: face {k}: index out of range ({i} not in [0, {nv}))")
        faces.extend(_triangulate(idx))
    return verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _parse_ply(text: str, path) -> tuple[np.ndarray, np.ndarray]:
    raw = text.splitlines()
    if not raw or raw[0].strip() != "ply":
        raise ShapeError(f"{path}: missing ply magic")
    elements: list[tuple[str, int, list[tuple[str, ...]]]] = []
    end = None
    for no, line in enumerate(raw[1:], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ShapeError(f"{path}: line {no}: only ASCII PLY is supported")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ShapeError(f"{path}: line {no}: property before element")
            elements[-1][2].append(tuple(tok[1:]))
        elif tok[0] == "end_header":
            end = no
            break
        else:
            raise ShapeError(f"{path}: line {no}: unexpected header line {line!r}")
    if end is None:
        raise ShapeError(f"{path}: missing end_header")
    body = [(no, line.split()) for no, line in enumerate(raw[end:], start=end + 1) if line.strip()]
    verts = np.empty((0, 3))
    faces: list[list[int]] = []
    pos = 0
    for name, count, props in elements:
        if len(body) < pos + count:
            raise ShapeError(f"{path}: element {name!r} truncated")
        chunk = body[pos:pos + count]
        pos += count
        if name == "vertex":
            names = [p[-1] for p in props]
            try:
                cols = [names.index(c) for c in "xyz"]
            except ValueError:
                raise ShapeError(f"{path}: vertex element lacks x/y/z properties") from None
            verts = np.empty((count, 3))
            for k, (no, tok) in enumerate(chunk):
                try:
                    verts[k] = [float(tok[c]) for c in cols]
                except (ValueError, IndexError):
                    raise ShapeError(f"{path}: line {no}: cannot parse vertex {k}") from None
        elif name == "face":
            for k, (no, tok) in enumerate(chunk):
                try:
                    cnt = int(tok[0])
                    idx = [int(t) for t in tok[1:1 + cnt]]
                except (ValueError, IndexError):
                    raise ShapeError(f"{path}: line {no}: cannot parse face {k}") from None
                if len(idx) != cnt or cnt < 3:
                    raise ShapeError(f"{path}: line {no}: face {k} is malformed")
                faces.extend(_triangulate(idx))
    faces_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces_arr.size:
        bad = np.flatnonzero(((faces_arr < 0) | (faces_arr >= len(verts))).any(axis=1))
        if len(bad):
            raise ShapeError(
                f"{path}: face {bad[0]}: index out of range "
                f"({faces_arr[bad[0]].max()} not in [0, {len(verts)}))")
    return verts, faces_arr


def load_shape(path, kind: str | None = None, k: int = 3) -> Shape:
    """Read an ASCII OFF, PLY or OBJ file.

    Parameters
    ----------
    path : str or Path
    kind : {'mesh', 'cloud', None}
        ``None`` returns a mesh when the file has faces and a cloud otherwise.
    k : int
        Neighbour count for point clouds.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = read_obj(path)
        return PointCloud(mesh.vertices, k=k) if kind == "cloud" else mesh
    text = path.read_text()
    if suffix == ".off" or (suffix != ".ply" and text.lstrip()[:3].upper() in ("OFF", "COF", "NOF")):
        verts, faces = _parse_off(text, path)
    elif suffix == ".ply" or text.startswith("ply"):
        verts, faces = _parse_ply(text, path)
    else:
        raise ShapeError(f"{path}: unknown format (expected .off, .ply or .obj)")
    if len(verts) == 0:
        raise ShapeError(f"{path}: no vertices")
    if kind is None:
        kind = "mesh" if len(faces) else "cloud"
    if kind == "cloud":
        return PointCloud(verts, k=k)
    if kind != "mesh":
        raise ValueError(f"kind must be 'mesh' or 'cloud', got {kind!r}")
    if len(faces) == 0:
        raise ShapeError(f"{path}: no faces, cannot build a mesh")
    try:
        return TriMesh(verts, faces)
    except ShapeError as exc:
        raise ShapeError(f"{path}: {exc}") from None


def write_off(path, mesh: TriMesh) -> None:
    with open(path, "w") as fh:
        fh.write(f"OFF\n{mesh.n_vertices} {mesh.n_faces} 0\n")
        np.savetxt(fh, mesh.vertices, fmt="%.17g")
        np.savetxt(fh, np.column_stack([np.full(mesh.n_faces, 3), mesh.faces]), fmt="%d")


def write_obj(path, mesh: TriMesh) -> None:
    """Write ``v``/``f`` records only (1-based face indices)."""
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for no, tok in _data_lines(Path(path).read_text()):
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            faces.extend(_triangulate([int(t.split("/")[0]) - 1 for t in tok[1:]]))
    return TriMesh(np.asarray(verts), np.asarray(faces))


# ------------------------------------------------------------------ normalisation


def with_vertices(shape: Shape, vertices: np.ndarray) -> Shape:
    if isinstance(shape, TriMesh):
        return TriMesh(vertices, shape.faces)
    return PointCloud(vertices, k=shape.k)


def bbox_diagonal(points: np.ndarray) -> float:
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def normalize(shape: Shape, scale: float | None = None) -> tuple[Shape, float, np.ndarray]:
    """Centre ``shape`` at its vertex centroid and rescale it.

    Returns ``(shape', scale, offset)`` with ``v' = (v - offset) * scale``.
    Without an explicit ``scale`` the bounding-box diagonal becomes 1.
    """
    v = shape.vertices
    offset = v.mean(axis=0)
    if scale is None:
        diag = bbox_diagonal(v)
        if not diag > 0:
            raise ShapeError("degenerate shape: bounding-box diagonal is zero")
        scale = 1.0 / diag
    if not (np.isfinite(scale) and scale > 0):
        raise ShapeError(f"invalid scale {scale}")
    return with_vertices(shape, (v - offset) * scale), float(scale), offset


def denormalize(points: np.ndarray, scale: float, offset: np.ndarray) -> np.ndarray:
    return np.asarray(points) / scale + offset


def normalize_pair(x: Shape, y: Shape):
    """Normalise both shapes with the scale derived from ``y``; each keeps its own centroid."""
    y2, scale, off_y = normalize(y)
    x2, _, off_x = normalize(x, scale=scale)
    return (x2, off_x), (y2, off_y), scale


# ---------------------------------------------------------------------- geodesics


def geodesic_distances(graph: VertexGraph, source) -> np.ndarray:
    """Dijkstra distances from ``source`` (an index or a sequence of indices).

    Unreachable vertices get ``inf``. A sequence of sources yields one row
    per source.
    """
    src = np.atleast_1d(np.asarray(source, dtype=np.int64))
    if src.size and (src.min() < 0 or src.max() >= graph.n_vertices):
        raise IndexError(f"source out of range [0, {graph.n_vertices})")
    d = csgraph.dijkstra(graph.adjacency, directed=False, indices=src)
    return d[0] if np.ndim(source) == 0 else d


def farthest_point_sampling(graph: VertexGraph, count: int, seed: int = 0,
                            candidates=None) -> np.ndarray:
    """Greedy geodesic farthest point sampling starting at ``seed``.

    Each step adds the candidate whose geodesic distance to the current
    samples is largest; ties go to the lowest vertex index.
    """
    n = graph.n_vertices
    cand = np.arange(n) if candidates is None else np.unique(np.asarray(candidates, dtype=np.int64))
    if count > len(cand):
        raise ValueError(f"cannot sample {count} points from {len(cand)} candidates")
    if not 0 <= seed < n:
        raise IndexError(f"seed {seed} out of range [0, {n})")
    chosen = [int(seed)]
    mind = geodesic_distances(graph, seed)[cand]
    taken = np.zeros(len(cand), dtype=bool)
    taken[cand == seed] = True
    while len(chosen) < count:
        score = np.where(taken, -np.inf, mind)
        k = int(np.argmax(score))
        taken[k] = True
        chosen.append(int(cand[k]))
        mind = np.minimum(mind, geodesic_distances(graph, cand[k])[cand])
    return np.asarray(chosen, dtype=np.int64)


def ring(graph: VertexGraph, vertex: int, t: int) -> np.ndarray:
    """Vertices within ``t`` graph hops of ``vertex`` (BFS order)."""
    seen = {vertex: 0}
    out = [vertex]
    queue = deque([vertex])
    while queue:
        i = queue.popleft()
        if seen[i] == t:
            continue
        for j in graph.neighbours(i):
            j = int(j)
            if j not in seen:
                seen[j] = seen[i] + 1
                out.append(j)
                queue.append(j)
    return np.asarray(out, dtype=np.int64)


# ----------------------------------------------------------------- mesh structure


def triangle_centroids(mesh: TriMesh) -> np.ndarray:
    return mesh.vertices[mesh.faces].mean(axis=1)


def adjacent_faces(mesh: TriMesh, i: int) -> np.ndarray:
    return mesh.vertex_faces[i]


def face_adjacency(mesh: TriMesh) -> FaceAdjacency:
    f = mesh.faces
    e = _sorted_face_edges(f)
    owner = np.tile(np.arange(len(f)), 3)
    order = np.lexsort((owner, e[:, 1], e[:, 0]))
    e, owner = e[order], owner[order]
    same = np.flatnonzero((e[1:] == e[:-1]).all(axis=1))
    pairs = np.column_stack([owner[same], owner[same + 1]])
    pairs.sort(axis=1)
    lengths = np.linalg.norm(mesh.vertices[e[same, 0]] - mesh.vertices[e[same, 1]], axis=1)
    o = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return FaceAdjacency(pairs[o], lengths[o])


# ------------------------------------------------------------------------ normals


def vertex_normals(shape: Shape) -> np.ndarray:
    if isinstance(shape, TriMesh):
        return _mesh_normals(shape)
    return _cloud_normals(shape)


def _mesh_normals(mesh: TriMesh) -> np.ndarray:
    fn = mesh.face_normals
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    norms = np.linalg.norm(acc, axis=1)
    scale = max(bbox_diagonal(mesh.vertices), 1e-300) ** 2
    bad = np.flatnonzero(norms <= 1e-14 * scale)
    if len(bad):
        raise ShapeError(f"vertex {bad[0]}: zero-area umbrella, normal undefined")
    return acc / norms[:, None]


def _cloud_normals(cloud: PointCloud) -> np.ndarray:
    p = cloud.points
    n = len(p)
    normals = np.zeros((n, 3))
    for i, nb in enumerate(cloud.neighbours):
        pts = p[np.concatenate([[i], nb])]
        if len(pts) < 3:
            raise ShapeError(f"point {i}: fewer than 2 neighbours, normal undefined")
        # smallest principal direction of the local covariance
        _, _, vt = np.linalg.svd(pts - pts.mean(axis=0))
        normals[i] = vt[-1]
    # orient consistently along a BFS spanning tree, each tree rooted to face outward
    centre = p.mean(axis=0)
    seen = np.zeros(n, dtype=bool)
    for root in range(n):
        if seen[root]:
            continue
        if normals[root] @ (p[root] - centre) < 0:
            normals[root] = -normals[root]
        seen[root] = True
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in cloud.neighbours[i]:
                if not seen[j]:
                    if normals[j] @ normals[i] < 0:
                        normals[j] = -normals[j]
                    seen[j] = True
                    queue.append(j)
    return normals


# --------------------------------------------------------------------- decimation


def _cluster(mesh: TriMesh, h: float) -> TriMesh | None:
    v = mesh.vertices
    keys = np.floor((v - v.min(axis=0)) / h).astype(np.int64)
    _, label = np.unique(keys, axis=0, return_inverse=True)
    label = label.ravel()
    counts = np.bincount(label)
    reps = np.zeros((len(counts), 3))
    np.add.at(reps, label, v)
    reps /= counts[:, None]
    f = label[mesh.faces]
    f = f[(f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])]
    if len(f) == 0:
        return None
    _, first = np.unique(np.sort(f, axis=1), axis=0, return_index=True)
    f = f[np.sort(first)]
    # greedily drop faces that would put a third face on an edge
    use: dict[tuple[int, int], int] = {}
    keep = []
    for face in f:
        es = [tuple(sorted((int(face[a]), int(face[b])))) for a, b in ((0, 1), (1, 2), (2, 0))]
        if all(use.get(e, 0) < 2 for e in es):
            for e in es:
                use[e] = use.get(e, 0) + 1
            keep.append(face)
    f = np.asarray(keep)
    used, inv = np.unique(f, return_inverse=True)
    return TriMesh(reps[used], inv.reshape(-1, 3))


def decimate(mesh: TriMesh, target_faces: int, max_iter: int = 40) -> TriMesh:
    """Crude vertex-clustering decimation towards ``target_faces``.

    The cell size is bisected (in log space) until the face count lands in
    ``[target/2, 2*target]``; if that never happens the closest result is
    returned and a :class:`DecimationWarning` is issued.
    """
    if target_faces < 4:
        raise ValueError("target_faces must be >= 4")
    if mesh.n_faces <= target_faces:
        return mesh
    diag = bbox_diagonal(mesh.vertices)
    lo, hi = np.log(diag * 1e-4), np.log(diag)
    best, best_err = mesh, abs(np.log(mesh.n_faces / target_faces))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        out = _cluster(mesh, float(np.exp(mid)))
        nf = 0 if out is None else out.n_faces
        if out is not None and nf >= 4:
            err = abs(np.log(nf / target_faces))
            if err < best_err:
                best, best_err = out, err
        if best_err <= 0.05:
            break
        if nf > target_faces:
            lo = mid
        else:
            hi = mid
    if best_err > np.log(2.0):
        warnings.warn(f"decimation reached {best.n_faces} faces for target {target_faces}",
                      DecimationWarning, stacklevel=2)
    return best
