import numpy as np
import pytest

from shapemip.geometry import TriMesh, VertexGraph
from shapemip.polyhedra import (ConvexPolyhedron, build_polyhedra, grow_polyhedron, mad, polyhedra_from_json,
                                polyhedra_to_json, prune_polyhedron)
from shapemip.shapes import blob, cube, grid


def cylinder(n=12, levels=4, height=1.0):
    ang = 2 * np.pi * np.arange(n) / n
    v = np.array([[np.cos(a), np.sin(a), z] for z in np.linspace(0, height, levels) for a in ang])
    f = []
    for k in range(levels - 1):
        for i in range(n):
            a, b = k * n + i, k * n + (i + 1) % n
            c, d = a + n, b + n
            f += [[a, b, d], [a, d, c]]
    return TriMesh(v, np.array(f))


def hexagon():
    ang = 2 * np.pi * np.arange(6) / 6
    v = np.vstack([[0, 0, 0], np.column_stack([np.cos(ang), np.sin(ang), np.zeros(6)])])
    f = [[0, 1 + i, 1 + (i + 1) % 6] for i in range(6)]
    return TriMesh(v, np.array(f))


def test_mad_examples():
    assert np.allclose(mad(np.tile([0.3, 0.4, 0.5], (4, 1))), 0)
    assert np.allclose(mad([[1, 0, 0], [-1, 0, 0]]), [1, 0, 0])
    assert np.allclose(mad([[0.2, 0.1, 0.9]]), 0)


def test_grow_flat_grid_reaches_boundary():
    g = grid(5, 5)
    p = grow_polyhedron(g, 12, eta=0.5)
    assert p.d == g.n_vertices
    assert p.ring_level >= 2


def test_grow_cube_corner_is_single_point():
    p = grow_polyhedron(cube(), 0, eta=0.05)
    assert p.d == 1 and p.ring_level == 0


def test_grow_cylinder_wall_accepts_one_ring():
    c = cylinder()
    p = grow_polyhedron(c, 12 + 3, eta=0.5)
    assert p.ring_level >= 1


def test_grow_errors():
    with pytest.raises(IndexError):
        grow_polyhedron(cube(), 99)
    with pytest.raises(ValueError):
        grow_polyhedron(cube(), 0, eta=0)


def test_prune_drops_grid_centre():
    g = grid(3, 3)
    p = grow_polyhedron(g, 0, eta=0.5)
    # anchor at a corner so the centre (vertex 4) is not protected
    pruned = prune_polyhedron(p, g.graph, max_points=9)
    assert 4 not in pruned.vertex_ids
    assert pruned.vertex_ids[0] == 0


def test_prune_single_point_unchanged():
    p = ConvexPolyhedron(np.zeros((1, 3)), 0, 0, np.array([7]))
    assert prune_polyhedron(p, VertexGraph.from_edges(np.zeros((0, 2)), np.zeros((8, 3)))) is p


def test_prune_hexagon_keeps_five():
    h = hexagon()
    p = grow_polyhedron(h, 0, eta=0.5)
    assert p.d == 7
    pruned = prune_polyhedron(p, h.graph, max_points=5)
    assert pruned.d == 5
    assert pruned.vertex_ids[0] == 0
    # without the cap the hull stage keeps the 6 boundary points (plus the anchor)
    full = prune_polyhedron(p, h.graph, max_points=10)
    assert set(full.vertex_ids) == set(range(7))


def test_build_polyhedra_properties():
    b = blob(1)
    ctrl = np.array([0, 5, 17, 30])
    polys = build_polyhedra(b, ctrl)
    for j, (p, v) in enumerate(zip(polys, ctrl)):
        assert 1 <= p.d <= 5
        assert p.vertex_ids[0] == v and np.allclose(p.vertices[0], b.vertices[v])
        assert p.anchor == j
    single = build_polyhedra(b, ctrl, single_point=True)
    assert all(p.d == 1 for p in single)


def test_polyhedra_json_roundtrip():
    polys = build_polyhedra(blob(1), np.array([1, 2]))
    back = polyhedra_from_json(polyhedra_to_json(polys))
    for a, b in zip(polys, back):
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.vertex_ids, b.vertex_ids)
