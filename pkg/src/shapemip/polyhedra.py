"""Convex polyhedral patches approximating the target surface around control points."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import Shape, VertexGraph, farthest_point_sampling, ring, vertex_normals


@dataclass(frozen=True, eq=False)
class ConvexPolyhedron:
    """Corner points ``vertices`` (d, 3) of one patch; row 0 is the anchor control point.

    ``anchor`` is the position of the owning control point within J,
    ``vertex_ids`` the shape vertices behind each row.
    """

    vertices: np.ndarray
    anchor: int
    ring_level: int
    vertex_ids: np.ndarray

    @property
    def d(self) -> int:
        return len(self.vertices)


def mad(normals) -> np.ndarray:
    """Column-wise mean absolute deviation about the column mean."""
    n = np.atleast_2d(np.asarray(normals, dtype=float))
    return np.abs(n - n.mean(axis=0)).mean(axis=0)


def grow_polyhedron(shape: Shape, vertex: int, eta: float = 0.5, anchor: int = 0,
                    normals: np.ndarray | None = None,
                    graph: VertexGraph | None = None) -> ConvexPolyhedron:
    """Largest t-hop disk around ``vertex`` whose normals pass ``max(mad) <= eta``.

    Growth stops at the first failing level or when the disk stops growing.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if not 0 <= vertex < shape.n_vertices:
        raise IndexError(f"control point {vertex} out of range [0, {shape.n_vertices})")
    normals = vertex_normals(shape) if normals is None else normals
    graph = shape.graph if graph is None else graph
    best, level = np.array([vertex]), 0
    t = 1
    while True:
        disk = ring(graph, vertex, t)
        if len(disk) == len(best) or mad(normals[disk]).max() > eta:
            break
        best, level = disk, t
        t += 1
    return ConvexPolyhedron(shape.vertices[best].copy(), anchor, level, best)


def _hull_2d(pts: np.ndarray, tol: float) -> np.ndarray:
    """Indices of points on the boundary of the 2D convex hull (collinear ones included)."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def chain(idx):
        out: list[int] = []
        for i in idx:
            while len(out) >= 2 and cross(pts[out[-2]], pts[out[-1]], pts[i]) < -tol:
                out.pop()
            out.append(i)
        return out

    lower = chain(order)
    upper = chain(order[::-1])
    hull = set(lower) | set(upper)
    # the monotone chain keeps collinear runs only on one side; sweep for boundary points
    ring_ = lower[:-1] + upper[:-1]
    for i in range(len(pts)):
        if i in hull:
            continue
        for a, b in zip(ring_, ring_[1:] + ring_[:1]):
            ab = pts[b] - pts[a]
            L = np.linalg.norm(ab)
            if L == 0:
                continue
            if abs(cross(pts[a], pts[b], pts[i])) <= tol * L:
                s = (pts[i] - pts[a]) @ ab / L**2
                if -1e-12 <= s <= 1 + 1e-12:
                    hull.add(i)
                    break
    return np.array(sorted(hull), dtype=np.int64)


def prune_polyhedron(poly: ConvexPolyhedron, graph: VertexGraph,
                     max_points: int = 5) -> ConvexPolyhedron:
    """Drop points strictly inside the planar hull, then keep the anchor plus FPS picks.

    The hull is taken in the plane of the two dominant principal directions;
    a (near) collinear point set skips the hull stage.
    """
    if poly.d == 1:
        return poly
    pts = poly.vertices
    centred = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    keep = np.arange(poly.d)
    scale = max(sv[0], 1e-300)
    if len(sv) >= 2 and sv[1] > 1e-9 * scale and poly.d >= 3:
        planar = centred @ vt[:2].T
        keep = _hull_2d(planar, tol=1e-9 * scale)
        keep = np.union1d(keep, [0])
    ids = poly.vertex_ids[keep]
    if len(ids) > max_points:
        picked = farthest_point_sampling(graph, max_points, seed=int(poly.vertex_ids[0]),
                                         candidates=ids)
        pos = {int(v): k for k, v in enumerate(poly.vertex_ids)}
        keep = np.array([pos[int(v)] for v in picked])
    else:
        keep = np.concatenate([[0], keep[keep != 0]])
    return ConvexPolyhedron(pts[keep].copy(), poly.anchor, poly.ring_level, poly.vertex_ids[keep])


def build_polyhedra(shape: Shape, control: np.ndarray, eta: float = 0.5,
                    max_points: int = 5, single_point: bool = False) -> list[ConvexPolyhedron]:
    """One pruned polyhedron per control vertex (``single_point`` forces d_j = 1)."""
    control = np.asarray(control, dtype=np.int64)
    if single_point:
        return [ConvexPolyhedron(shape.vertices[[v]].copy(), j, 0, np.array([v]))
                for j, v in enumerate(control)]
    normals = vertex_normals(shape)
    graph = shape.graph
    return [prune_polyhedron(grow_polyhedron(shape, int(v), eta, j, normals, graph), graph, max_points)
            for j, v in enumerate(control)]


def polyhedra_to_json(polys: list[ConvexPolyhedron]) -> str:
    return json.dumps([{"anchor": p.anchor, "ring_level": p.ring_level,
                        "vertex_ids": p.vertex_ids.tolist(), "vertices": p.vertices.tolist()}
                       for p in polys], indent=1)


def polyhedra_from_json(text: str) -> list[ConvexPolyhedron]:
    return [ConvexPolyhedron(np.asarray(d["vertices"], dtype=float).reshape(-1, 3), int(d["anchor"]),
                             int(d["ring_level"]), np.asarray(d["vertex_ids"], dtype=np.int64))
            for d in json.loads(text)]
