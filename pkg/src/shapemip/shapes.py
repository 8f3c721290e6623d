"""Small procedural shapes for tests, demos and the acceptance suite."""
from __future__ import annotations

import numpy as np

from .geometry import TriMesh


def tetrahedron() -> TriMesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(v, f)


def cube() -> TriMesh:
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    f = [[a, b, c] for a, b, c, d in quads] + [[a, c, d] for a, b, c, d in quads]
    return TriMesh(v, np.array(f))


def grid(nx: int, ny: int, spacing: float = 1.0) -> TriMesh:
    """Flat triangulated (nx x ny)-vertex grid in the z = 0 plane."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    v = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)])
    f = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b, c, d = i * ny + j, (i + 1) * ny + j, (i + 1) * ny + j + 1, i * ny + j + 1
            f += [[a, b, c], [a, c, d]]
    return TriMesh(v, np.array(f))


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    t = (1 + 5 ** 0.5) / 2
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2],
         [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5],
         [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriMesh(radius * np.array(verts), np.array(faces))


def blob(subdivisions: int = 2, seed: int = 0, amplitude: float = 0.25) -> TriMesh:
    """Icosphere with a smooth random radial bump field and anisotropic scaling.

    The asymmetry keeps geodesic features of different vertices apart,
    which makes self-matching instances well posed.
    """
    s = icosphere(subdivisions)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(4, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    w = rng.uniform(0.5, 1.0, size=4)
    v = s.vertices
    r = 1.0 + amplitude * (np.exp(3.0 * (v @ dirs.T - 1.0)) * w).sum(axis=1)
    return TriMesh(v * r[:, None] * np.array([1.3, 1.0, 0.8]), s.faces)


def rotation_z(angle: float) -> np.ndarray:
    """Rotation about z acting on row vectors from the right: x @ R."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
