import numpy as np
import pytest

from shapemip.deformation import (DeformationField, DeformationIndex, apply_triangle_transform,
                                  consistency_constraints, deform_mesh, rigidity_value, smoothness_terms)
from shapemip.geometry import TriMesh
from shapemip.shapes import blob, rotation_z, tetrahedron


def field_vector(field, index):
    return index.pack(field, np.zeros(index.size))


def rigid_field(mesh, R, shift=np.zeros(3)):
    """Global map x -> x R + shift written per face: t_p = c_p R - c_p + shift."""
    c = mesh.centroids
    return DeformationField(R, np.zeros((mesh.n_faces, 3, 3)), c @ R - c + shift, c)


def two_triangles():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    return TriMesh(v, np.array([[0, 1, 2], [1, 3, 2]]))


def test_apply_transform_examples():
    m = tetrahedron()
    f = DeformationField.identity(m)
    x = np.array([0.3, -0.2, 0.9])
    assert np.allclose(apply_triangle_transform(f, 1, x), x)
    rng = np.random.default_rng(0)
    g = DeformationField(rng.normal(size=(3, 3)), rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3)), m.centroids)
    assert np.allclose(apply_triangle_transform(g, 2, m.centroids[2]), m.centroids[2] + g.t[2])
    h = DeformationField(rotation_z(np.pi / 2), np.zeros((1, 3, 3)), np.zeros((1, 3)), np.zeros((1, 3)))
    assert np.allclose(apply_triangle_transform(h, 0, [1, 0, 0]), [0, 1, 0])


def test_consistency_row_counts():
    # vertex 0 of a single triangle: one face, no rows
    one = TriMesh(np.eye(3), np.array([[0, 1, 2]]))
    idx = DeformationIndex.contiguous(1)
    assert consistency_constraints(one, idx).n_rows == 0
    # tetrahedron: every vertex has 3 faces -> 2 vector equalities = 6 rows each
    t = tetrahedron()
    blk = consistency_constraints(t, DeformationIndex.contiguous(4))
    assert blk.n_rows == 4 * 6


def test_identity_and_rigid_fields_satisfy_consistency():
    m = blob(1)
    idx = DeformationIndex.contiguous(m.n_faces)
    blk = consistency_constraints(m, idx)
    A = blk.matrix(idx.size)
    for fld in (DeformationField.identity(m), rigid_field(m, rotation_z(0.7), np.array([1.0, 2, 3]))):
        assert np.abs(A @ field_vector(fld, idx) - blk.rhs).max() < 1e-12


def test_smoothness_examples():
    m = two_triangles()
    idx = DeformationIndex.contiguous(2)
    sm = smoothness_terms(m, idx, both_orientations=True)
    assert len(sm) == 2
    assert sm.weights.sum() == pytest.approx(1.0)
    f = DeformationField(np.eye(3), np.zeros((2, 3, 3)), np.array([[1.0, 0, 0], [0, 0, 0]]), m.centroids)
    d = sm.evaluate(field_vector(f, idx))
    k = int(np.flatnonzero((sm.pairs == [0, 1]).all(axis=1))[0])
    assert np.allclose(d[k], [1, 0, 0])
    single = smoothness_terms(m, idx, both_orientations=False)
    assert len(single) == 1 and single.weights.sum() == pytest.approx(1.0)


def test_uniform_field_has_zero_smoothness():
    m = blob(1)
    idx = DeformationIndex.contiguous(m.n_faces)
    sm = smoothness_terms(m, idx)
    assert sm.weights.sum() == pytest.approx(1.0)
    assert np.abs(sm.evaluate(field_vector(rigid_field(m, rotation_z(0.3), np.ones(3)), idx))).max() < 1e-12


def test_smoothness_detects_disagreement():
    m = blob(1)
    idx = DeformationIndex.contiguous(m.n_faces)
    sm = smoothness_terms(m, idx)
    fld = rigid_field(m, np.eye(3))
    t = fld.t.copy()
    t[5] += [0, 0, 0.1]
    bad = DeformationField(fld.R, fld.T, t, fld.centroids)
    d = np.abs(sm.evaluate(field_vector(bad, idx))).max(axis=1)
    touched = (sm.pairs == 5).any(axis=1)
    assert np.all(d[touched] > 0.05) and np.all(d[~touched] < 1e-12)


def test_no_smoothness_terms_without_adjacency():
    m = TriMesh(np.eye(3), np.array([[0, 1, 2]]))
    assert len(smoothness_terms(m, DeformationIndex.contiguous(1))) == 0


def test_rigidity_value():
    m = tetrahedron()
    assert rigidity_value(DeformationField.identity(m)) == 0
    T = np.zeros((4, 3, 3))
    T[0] = np.eye(3)
    assert rigidity_value(DeformationField(np.eye(3), T, np.zeros((4, 3)), m.centroids)) == pytest.approx(np.sqrt(3))


def test_deform_mesh_examples():
    m = blob(1)
    out, worst = deform_mesh(m, DeformationField.identity(m))
    assert np.allclose(out.vertices, m.vertices) and worst < 1e-12
    v = np.array([0.5, -1.0, 2.0])
    c = m.centroids
    shift = DeformationField(np.eye(3), np.zeros((m.n_faces, 3, 3)), np.tile(v, (m.n_faces, 1)), c)
    out, worst = deform_mesh(m, shift)
    assert np.allclose(out.vertices, m.vertices + v)
    R = rotation_z(0.4)
    out, worst = deform_mesh(m, rigid_field(m, R))
    assert worst < 1e-12
    assert np.allclose(out.vertices, m.vertices @ R)


def test_deform_mesh_policy_independent_when_consistent():
    m = blob(1)
    fld = rigid_field(m, rotation_z(1.1), np.array([0.1, 0.2, 0.3]))
    a, _ = deform_mesh(m, fld, "min")
    b, _ = deform_mesh(m, fld, "max")
    assert np.abs(a.vertices - b.vertices).max() <= 1e-9


def test_deform_mesh_reports_inconsistency():
    m = two_triangles()
    f = DeformationField(np.eye(3), np.zeros((2, 3, 3)), np.array([[0.0, 0, 0.2], [0, 0, 0]]), m.centroids)
    _, worst = deform_mesh(m, f)
    assert worst == pytest.approx(0.2)
    with pytest.raises(ValueError):
        deform_mesh(tetrahedron(), f)


def test_field_dict_roundtrip():
    m = tetrahedron()
    rng = np.random.default_rng(2)
    f = DeformationField(rng.normal(size=(3, 3)), rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3)), m.centroids)
    g = DeformationField.from_dict(f.to_dict())
    for a in ("R", "T", "t", "centroids"):
        assert np.array_equal(getattr(f, a), getattr(g, a))
