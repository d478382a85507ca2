import numpy as np
import pytest
import scipy.io
import scipy.sparse as sparse
from hypothesis import given, settings, strategies as st

from lodqep.errors import AssumptionViolation, ParameterError
from lodqep.fem import (MassDamping, ProportionalDamping, StiffnessDamping, assemble_damping,
                        assemble_mass, assemble_mass_full, assemble_stiffness,
                        assemble_stiffness_full, clement, damping_from_dict, export_matrix_market,
                        prolongation, prolongation_full)
from lodqep.field import Constant, Smooth, make_composite
from lodqep.mesh import build_uniform


def _vertex(mesh, i, j):
    return j * (mesh.n + 1) + i


def _interior(mesh, i, j):
    return mesh.interior_index[_vertex(mesh, i, j)]


def _symmetric(X):
    return abs(X - X.T).max() <= 1e-12 * abs(X).max()


@pytest.mark.parametrize("level", [2, 4, 6])
def test_stiffness_interior_diagonal(level):
    m = build_uniform(level)
    K = assemble_stiffness(m, np.ones(m.n_triangles))
    np.testing.assert_allclose(K.diagonal(), 4.0, rtol=1e-14)
    assert _symmetric(K)
    # off-diagonal stencil: -1 to the four axis neighbours, 0 along the diagonal
    c = _interior(m, 2, 2)
    row = K.getrow(c).toarray().ravel()
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        assert row[_interior(m, 2 + di, 2 + dj)] == pytest.approx(-1.0)
    assert abs(row[_interior(m, 3, 3)]) < 1e-14
    assert abs(row.sum()) < 1e-13


def test_stiffness_linear_in_kappa():
    m = build_uniform(4)
    K1 = assemble_stiffness(m, np.ones(m.n_triangles))
    K3 = assemble_stiffness(m, np.full(m.n_triangles, 3.7))
    assert abs(K3 - 3.7 * K1).max() <= 1e-14 * abs(K3).max()


def test_stiffness_positive_definite():
    m = build_uniform(3)
    K = assemble_stiffness(m, np.ones(m.n_triangles)).toarray()
    w = np.linalg.eigvalsh(K)
    # P1 stiffness on this mesh is the 5-point Laplacian scaled by h^2
    h = m.spacing
    assert w.min() > 0
    assert w.min() == pytest.approx(8 * np.sin(np.pi * h / 2) ** 2, rel=1e-12)


def test_stiffness_rejects_nonpositive():
    m = build_uniform(2)
    kappa = np.ones(m.n_triangles)
    kappa[3] = 0.0
    with pytest.raises(AssumptionViolation):
        assemble_stiffness(m, kappa)
    with pytest.raises(ParameterError):
        assemble_stiffness(m, np.ones(3))


def test_mass_partition_of_unity():
    m = build_uniform(5)
    M = assemble_mass_full(m)
    assert M.sum() == pytest.approx(1.0, abs=1e-14)
    assert _symmetric(M)


@pytest.mark.parametrize("level", [2, 5])
def test_mass_interior_diagonal(level):
    m = build_uniform(level)
    M = assemble_mass(m)
    np.testing.assert_allclose(M.diagonal(), m.spacing ** 2 / 2, rtol=1e-14)


def test_mass_zero_weight():
    m = build_uniform(3)
    assert assemble_mass(m, np.zeros(m.n_triangles)).count_nonzero() == 0


def test_mass_element_formula():
    m = build_uniform(1)
    w = np.arange(1.0, m.n_triangles + 1)
    M = assemble_mass_full(m, w).toarray()
    ref = np.zeros_like(M)
    for t, tri in enumerate(m.triangles):
        ref[np.ix_(tri, tri)] += m.areas[t] * w[t] / 12 * (np.ones((3, 3)) + np.eye(3))
    np.testing.assert_allclose(M, ref, rtol=1e-15, atol=1e-16)


def test_mass_positive_definite():
    m = build_uniform(3)
    assert np.linalg.eigvalsh(assemble_mass(m).toarray()).min() > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_stiffness_monotone_in_kappa(seed):
    rng = np.random.default_rng(seed)
    m = build_uniform(3)
    k = rng.uniform(0.1, 2.0, m.n_triangles)
    k2 = k + rng.uniform(0.0, 1.0, m.n_triangles)
    v = rng.standard_normal(m.n_interior)
    assert v @ (assemble_stiffness(m, k) @ v) <= v @ (assemble_stiffness(m, k2) @ v) * (1 + 1e-14)


@pytest.mark.parametrize("chunks", [2, 7, 64])
def test_chunked_assembly_matches_serial(chunks):
    m = build_uniform(6)
    rng = np.random.default_rng(1)
    k = rng.uniform(0.01, 1, m.n_triangles)
    A = assemble_stiffness_full(m, k)
    B = assemble_stiffness_full(m, k, chunks=chunks)
    assert abs(A - B).max() <= 1e-14 * abs(A).max()
    C = assemble_mass_full(m, k, chunks=chunks)
    assert abs(C - assemble_mass_full(m, k)).max() <= 1e-14 * abs(C).max()
    # fixed chunking is reproducible bit for bit
    D = assemble_stiffness_full(m, k, chunks=chunks)
    assert np.array_equal(B.data, D.data) and np.array_equal(B.indices, D.indices)


def test_damping_proportional_zero():
    m = build_uniform(3)
    K = assemble_stiffness(m, np.ones(m.n_triangles))
    D = assemble_damping(m, ProportionalDamping(0.0, 0.0), K=K)
    assert D.count_nonzero() == 0


def test_damping_proportional_combination():
    m = build_uniform(3)
    K = assemble_stiffness(m, np.ones(m.n_triangles))
    M = assemble_mass(m)
    D = assemble_damping(m, ProportionalDamping(0.1, 0.2), K=K, M=M)
    assert abs(D - (0.1 * K + 0.2 * M)).max() < 1e-15


def test_damping_mass_type_smooth():
    m = build_uniform(4)
    f = Smooth("sin_x1")
    D = assemble_damping(m, MassDamping(f))
    assert _symmetric(D)
    ref = assemble_mass(m, 1 + np.sin(10 * m.centroids[:, 0]))
    assert abs(D - ref).max() == 0


def test_damping_stiffness_type_bounds():
    m = build_uniform(6)
    f = make_composite(0.006, 0.015)
    D = assemble_damping(m, StiffnessDamping(f)).toarray()
    K1 = assemble_stiffness(m, np.ones(m.n_triangles)).toarray()
    assert np.allclose(D, D.T, rtol=0, atol=1e-15)
    # quadratic form lies between the scaled unweighted ones
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.standard_normal(m.n_interior)
        q, q1 = v @ D @ v, v @ K1 @ v
        assert 0.006 * q1 * (1 - 1e-12) <= q <= 0.015 * q1 * (1 + 1e-12)
    # entrywise bounds on the diagonal
    d, d1 = np.diag(D), np.diag(K1)
    assert np.all(d >= 0.006 * d1 - 1e-15) and np.all(d <= 0.015 * d1 + 1e-15)


def test_damping_from_dict():
    spec = damping_from_dict({"type": "proportional", "alpha0": 0.1, "alpha1": 0.2})
    assert spec == ProportionalDamping(0.1, 0.2)
    spec = damping_from_dict(MassDamping(Constant(2.0)).to_dict())
    assert spec == MassDamping(Constant(2.0))
    with pytest.raises(ParameterError):
        damping_from_dict({"type": "viscous"})


def test_prolongation_identity():
    m = build_uniform(3)
    P = prolongation(m, m)
    assert abs(P - sparse.identity(m.n_interior)).max() == 0


def test_prolongation_nodal_and_midpoint():
    coarse, fine = build_uniform(2), build_uniform(3)
    P = prolongation_full(coarse, fine).tocsr()
    # fine vertex coincident with coarse vertex (1,1)
    row = P.getrow(_vertex(fine, 2, 2))
    assert row.nnz == 1 and row[0, _vertex(coarse, 1, 1)] == 1.0
    # midpoint of the horizontal coarse edge (1,1)-(2,1)
    row = P.getrow(_vertex(fine, 3, 2)).toarray().ravel()
    assert sorted(row[row > 0].tolist()) == [0.5, 0.5]
    assert row[_vertex(coarse, 1, 1)] == 0.5 and row[_vertex(coarse, 2, 1)] == 0.5
    # rows sum to one, values in [0, 1]
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, rtol=1e-14)
    assert P.data.min() >= 0 and P.data.max() <= 1


def test_prolongation_reproduces_linear_functions():
    coarse, fine = build_uniform(2), build_uniform(5)
    P = prolongation_full(coarse, fine)
    f = lambda xy: 0.3 + 2 * xy[:, 0] - 1.5 * xy[:, 1]
    np.testing.assert_allclose(P @ f(coarse.vertices), f(fine.vertices), atol=1e-14)


def test_prolongation_not_nested():
    with pytest.raises(ParameterError):
        prolongation(build_uniform(4), build_uniform(3))


@pytest.mark.parametrize("levels", [(2, 3), (2, 5), (3, 6)])
def test_clement_value_of_coarse_hat(levels):
    coarse, fine = (build_uniform(k) for k in levels)
    I = clement(coarse, fine)
    P = prolongation(coarse, fine)
    vals = I(P.toarray())
    # (phi_z, phi_z) / (1, phi_z) = (H^2/2) / H^2 on uniform meshes
    np.testing.assert_allclose(np.diag(vals), 0.5, rtol=1e-13)
    assert np.all(I.scaling > 0)
    np.testing.assert_allclose(1 / I.scaling, coarse.spacing ** 2, rtol=1e-13)


def test_clement_uses_full_mass_matrix():
    coarse, fine = build_uniform(2), build_uniform(4)
    with pytest.raises(ParameterError):
        clement(coarse, fine, M_h_full=assemble_mass(fine))


def test_clement_row_definition():
    coarse, fine = build_uniform(2), build_uniform(4)
    I = clement(coarse, fine)
    rng = np.random.default_rng(3)
    v = rng.standard_normal(fine.n_interior)
    vfull = np.zeros(fine.n_vertices)
    vfull[fine.interior_vertices] = v
    M = assemble_mass_full(fine)
    Pf = prolongation_full(coarse, fine)
    num = Pf.T @ (M @ vfull)
    den = Pf.T @ (M @ np.ones(fine.n_vertices))
    ref = (num / den)[coarse.interior_vertices]
    np.testing.assert_allclose(I(v), ref, rtol=1e-13, atol=1e-15)


def test_clement_linear():
    coarse, fine = build_uniform(2), build_uniform(5)
    I = clement(coarse, fine)
    rng = np.random.default_rng(4)
    v, w = rng.standard_normal((2, fine.n_interior))
    np.testing.assert_allclose(I(2.5 * v - 0.7 * w), 2.5 * I(v) - 0.7 * I(w), atol=1e-13)


def test_clement_stability():
    coarse, fine = build_uniform(2), build_uniform(5)
    I = clement(coarse, fine)
    P = prolongation(coarse, fine)
    K = assemble_stiffness(fine, np.ones(fine.n_triangles))
    M = assemble_mass(fine)
    H = coarse.diameter
    rng = np.random.default_rng(5)
    xy = fine.vertices[fine.interior_vertices]
    worst = 0.0
    for trial in range(100):
        if trial % 2:
            v = rng.standard_normal(fine.n_interior)
        else:
            # smooth random function, sum of low sine modes
            a = rng.standard_normal((4, 4))
            v = sum(a[p, q] * np.sin((p + 1) * np.pi * xy[:, 0]) * np.sin((q + 1) * np.pi * xy[:, 1])
                    for p in range(4) for q in range(4))
        e = v - P @ I(v)
        ratio = np.sqrt(e @ (M @ e)) / (H * np.sqrt(v @ (K @ v)))
        worst = max(worst, ratio)
    assert worst <= 10


def test_export_matrix_market(tmp_path):
    m = build_uniform(2)
    K = assemble_stiffness(m, np.ones(m.n_triangles))
    path = tmp_path / "K.mtx"
    export_matrix_market(path, K, comment="stiffness")
    back = scipy.io.mmread(str(path))
    assert abs(back - K).max() == 0
