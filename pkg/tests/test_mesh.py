import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lodqep.errors import ParameterError
from lodqep.mesh import build_uniform, coarse_fine_map, element_patch


@pytest.mark.parametrize("level, nv, nt, ni", [(1, 9, 8, 1), (3, 81, 128, 49)])
def test_counts(level, nv, nt, ni):
    m = build_uniform(level)
    assert (m.n_vertices, m.n_triangles, m.n_interior) == (nv, nt, ni)


@pytest.mark.parametrize("level", [1, 2, 3, 5])
def test_invariants(level):
    m = build_uniform(level)
    n = 2 ** level
    assert m.n_vertices == (n + 1) ** 2
    assert m.n_triangles == 2 * 4 ** level
    assert m.n_interior == (n - 1) ** 2
    assert abs(m.areas.sum() - 1.0) < 1e-14
    np.testing.assert_allclose(m.areas, 0.5 / n ** 2)
    assert m.spacing == 2.0 ** -level
    assert m.diameter == pytest.approx(2.0 ** -(level - 0.5))
    # lattice coordinates
    scaled = m.vertices * n
    assert np.array_equal(scaled, np.round(scaled))


def test_triangles_are_right_isoceles_same_diagonal():
    m = build_uniform(3)
    h = m.spacing
    for tri in m.triangles:
        p = m.vertices[tri]
        edges = sorted(np.linalg.norm(p[i] - p[j]) for i, j in ((0, 1), (1, 2), (0, 2)))
        np.testing.assert_allclose(edges, [h, h, np.sqrt(2) * h])
        # hypotenuse runs lower-left to upper-right
        d = p[:, None, :] - p[None, :, :]
        lengths = np.linalg.norm(d, axis=2)
        i, j = np.unravel_index(np.argmax(lengths), lengths.shape)
        v = p[j] - p[i]
        assert v[0] * v[1] > 0


def test_row_major_ordering():
    m = build_uniform(2)
    np.testing.assert_array_equal(m.vertices[:5], [[0, 0], [0.25, 0], [0.5, 0], [0.75, 0], [1, 0]])
    # first square: lower triangle then upper
    np.testing.assert_array_equal(m.triangles[0], [0, 1, 6])
    np.testing.assert_array_equal(m.triangles[1], [0, 6, 5])
    assert m.interior_index[6] == 0 and m.interior_index[0] == -1


@pytest.mark.parametrize("level", [0, 13, 2.5])
def test_level_out_of_range(level):
    with pytest.raises(ParameterError):
        build_uniform(level)


def test_patch_saturates():
    m = build_uniform(4)
    T = 2 * (8 * 16 + 8)
    p = element_patch(m, T, 16)
    assert len(p.elements) == 2 * 4 ** 4


def _brute_force_layer(m, elements):
    verts = set(m.triangles[list(elements)].ravel().tolist())
    return {t for t in range(m.n_triangles) if verts & set(m.triangles[t].tolist())}


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_patch_saturation_order(level):
    # growth toward the corners off the split diagonal is slowest: every patch
    # covers the mesh from order 2^(k+1)-1 on, the centre element from 2^k
    m = build_uniform(level)
    full = m.n_triangles
    sizes = [len(element_patch(m, T, 2 ** (level + 1) - 1).elements) for T in range(full)]
    assert min(sizes) == full
    assert min(len(element_patch(m, T, 2 ** (level + 1) - 2).elements) for T in range(full)) < full
    centre = 2 * ((m.n // 2) * m.n + m.n // 2)
    assert len(element_patch(m, centre, 2 ** level).elements) == full


def test_patch_one_layer_brute_force():
    m = build_uniform(3)
    for T in (2 * (3 * 8 + 4), 2 * (3 * 8 + 4) + 1, 0, 127):
        got = set(element_patch(m, T, 1).elements.tolist())
        assert got == _brute_force_layer(m, {T})


def test_patch_ell_layers_brute_force():
    m = build_uniform(3)
    T = 2 * (4 * 8 + 3)
    ref = {T}
    for ell in range(1, 5):
        ref = _brute_force_layer(m, ref)
        assert set(element_patch(m, T, ell).elements.tolist()) == ref


def test_patch_monotone():
    m = build_uniform(3)
    for T in range(m.n_triangles):
        p1 = set(element_patch(m, T, 1).elements.tolist())
        p2 = set(element_patch(m, T, 2).elements.tolist())
        assert p1 <= p2


def test_patch_interior_element_ell1_size():
    # vertex closure of one triangle on a uniform mesh: 13 triangles
    m = build_uniform(3)
    assert len(element_patch(m, 2 * (3 * 8 + 3), 1).elements) == 13


def test_patch_symmetry_under_reflection():
    # reflecting (x1,x2)->(x2,x1) maps the lower triangle of square (i,j) to the
    # upper triangle of square (j,i); element counts must agree
    m = build_uniform(3)
    n = 8
    for i, j in itertools.product(range(n), repeat=2):
        lower = 2 * (j * n + i)
        upper_reflected = 2 * (i * n + j) + 1
        for ell in (1, 2):
            assert (len(element_patch(m, lower, ell).elements)
                    == len(element_patch(m, upper_reflected, ell).elements))


def test_patch_fine_nodes_strictly_inside():
    coarse, fine = build_uniform(2), build_uniform(4)
    p = element_patch(coarse, 2 * (1 * 4 + 1), 1, fine=fine)
    xy = fine.vertices[fine.interior_vertices[p.fine_interior_nodes]]
    # patch of that element is the square [0, 0.75]^2 minus two corner triangles
    assert np.all(xy > 0) and np.all(xy < 0.75)
    assert len(p.fine_interior_nodes) > 0
    # every coarse vertex of the patch elements is listed as touching
    assert set(p.coarse_nodes_touching.tolist()) == set(
        coarse.triangles[p.elements].ravel().tolist())


@pytest.mark.parametrize("dk, per", [(1, 4), (2, 16)])
def test_coarse_fine_map(dk, per):
    coarse = build_uniform(2)
    fine = build_uniform(2 + dk)
    mp = coarse_fine_map(coarse, fine)
    assert all(len(ts) == per for ts in mp)
    allf = np.concatenate(mp)
    assert len(allf) == fine.n_triangles
    assert len(np.unique(allf)) == fine.n_triangles
    # fine triangles lie inside their coarse triangle
    for T, ts in enumerate(mp):
        area = fine.areas[ts].sum()
        assert area == pytest.approx(coarse.areas[T])


def test_coarse_fine_map_not_nested():
    with pytest.raises(ParameterError):
        coarse_fine_map(build_uniform(3), build_uniform(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10 ** 6), st.integers(1, 3))
def test_patch_closure_property(level, seed, ell):
    m = build_uniform(level)
    T = seed % m.n_triangles
    ref = {T}
    for _ in range(ell):
        ref = _brute_force_layer(m, ref)
    assert set(element_patch(m, T, ell).elements.tolist()) == ref
