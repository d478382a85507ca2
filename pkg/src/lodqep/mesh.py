"""Nested uniform triangulations of the unit square.

Vertices are numbered row-major (``v = j*(n+1) + i`` for the point
``(i/n, j/n)``).  Grid squares are scanned row-major and every square is
split along its lower-left to upper-right diagonal, lower triangle first::

    lower: (i, j), (i+1, j), (i+1, j+1)
    upper: (i, j), (i+1, j+1), (i, j+1)
"""
from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import scipy.sparse as sparse

from .errors import ParameterError

MAX_LEVEL = 12


@dataclass(frozen=True, eq=False)
class TriMesh:
    level: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    interior_index: np.ndarray
    interior_vertices: np.ndarray

    @property
    def n(self):
        """Number of grid cells per side."""
        return 2 ** self.level

    @property
    def spacing(self):
        return 2.0 ** -self.level

    @property
    def diameter(self):
        """Maximal element diameter, sqrt(2) * spacing."""
        return math.sqrt(2.0) * self.spacing

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_interior(self):
        return len(self.interior_vertices)

    @cached_property
    def areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def incidence(self):
        """Sparse (triangles x vertices) 0/1 incidence matrix."""
        nt = self.n_triangles
        rows = np.repeat(np.arange(nt), 3)
        data = np.ones(3 * nt, dtype=np.int32)
        return sparse.csr_matrix((data, (rows, self.triangles.ravel())),
                                 shape=(nt, self.n_vertices))

    @cached_property
    def valence(self):
        """Number of triangles incident to each vertex."""
        return np.bincount(self.triangles.ravel(), minlength=self.n_vertices)

    def locate(self, points):
        """Index of the triangle containing each point (ties resolved inward)."""
        points = np.atleast_2d(points)
        n = self.n
        s = points[:, 0] * n
        t = points[:, 1] * n
        i = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
        j = np.clip(np.floor(t).astype(np.int64), 0, n - 1)
        upper = (t - j) > (s - i)
        return 2 * (j * n + i) + upper


def build_uniform(level):
    """Uniform triangulation of [0,1]^2 with 2**level cells per side."""
    if not isinstance(level, (int, np.integer)) or not 1 <= level <= MAX_LEVEL:
        raise ParameterError(f"mesh level must be an integer in [1, {MAX_LEVEL}], got {level!r}")
    level = int(level)
    n = 2 ** level
    idx = np.arange(n + 1)
    x, y = np.meshgrid(idx, idx)  # y varies along rows
    vertices = np.column_stack([x.ravel(), y.ravel()]) / n

    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ll = (jj * (n + 1) + ii).ravel()
    lr = ll + 1
    ul = ll + n + 1
    ur = ul + 1
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([ll, lr, ur])
    triangles[1::2] = np.column_stack([ll, ur, ul])

    vi = vertices * n
    boundary = (np.isclose(vi[:, 0], 0) | np.isclose(vi[:, 0], n)
                | np.isclose(vi[:, 1], 0) | np.isclose(vi[:, 1], n))
    interior_vertices = np.flatnonzero(~boundary)
    interior_index = np.full(len(vertices), -1, dtype=np.int64)
    interior_index[interior_vertices] = np.arange(len(interior_vertices))

    for a in (vertices, triangles, boundary, interior_index, interior_vertices):
        a.setflags(write=False)
    return TriMesh(level, vertices, triangles, boundary, interior_index, interior_vertices)


def _check_nested(coarse, fine):
    if fine.level < coarse.level:
        raise ParameterError(
            f"fine level {fine.level} must not be below coarse level {coarse.level}")


def fine_to_coarse(coarse, fine):
    """Coarse triangle containing each fine triangle."""
    _check_nested(coarse, fine)
    return coarse.locate(fine.centroids)


def coarse_fine_map(coarse, fine):
    """Map each coarse triangle to the sorted array of fine triangles tiling it."""
    if fine.level <= coarse.level:
        raise ParameterError("coarse_fine_map needs fine.level > coarse.level")
    owner = fine_to_coarse(coarse, fine)
    order = np.argsort(owner, kind="stable")
    bounds = np.searchsorted(owner[order], np.arange(coarse.n_triangles + 1))
    return [order[bounds[t]:bounds[t + 1]] for t in range(coarse.n_triangles)]


@dataclass(frozen=True, eq=False)
class ElementPatch:
    center_element: int
    order: float
    elements: np.ndarray
    coarse_nodes_touching: np.ndarray
    fine_interior_nodes: np.ndarray = field(default=None)

    @property
    def key(self):
        """Hashable identity of the covered region."""
        return self.elements.tobytes()


def patch_elements(mesh, T, ell):
    """Boolean element mask of the ell-layer vertex-neighbourhood of T."""
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[T] = True
    if ell is None or math.isinf(ell):
        mask[:] = True
        return mask
    inc = mesh.incidence
    for _ in range(int(ell)):
        touched = (inc.T @ mask.astype(np.int32)) > 0
        grown = (inc @ touched.astype(np.int32)) > 0
        if grown.sum() == mask.sum():
            break
        mask = grown
    return mask


def element_patch(mesh, T, ell, fine=None, owner=None):
    """Element patch of order ``ell`` around coarse triangle ``T``.

    ``ell=None`` (or ``inf``) gives the whole mesh.  When ``fine`` is given
    the fine interior degrees of freedom strictly inside the patch are
    computed as well; ``owner`` may pass a precomputed
    :func:`fine_to_coarse` array.
    """
    if not 0 <= T < mesh.n_triangles:
        raise ParameterError(f"element {T} out of range")
    if ell is not None and not math.isinf(ell) and ell < 1:
        raise ParameterError(f"patch order must be >= 1, got {ell}")
    mask = patch_elements(mesh, T, ell)
    elements = np.flatnonzero(mask)
    nodes = np.unique(mesh.triangles[elements])
    fine_nodes = None
    if fine is not None:
        if owner is None:
            owner = fine_to_coarse(mesh, fine)
        inside = mask[owner]
        count = np.bincount(fine.triangles[inside].ravel(), minlength=fine.n_vertices)
        strict = (count == fine.valence) & (count > 0) & ~fine.boundary_mask
        fine_nodes = fine.interior_index[np.flatnonzero(strict)]
    order = math.inf if ell is None else ell
    return ElementPatch(int(T), order, elements, nodes, fine_nodes)
