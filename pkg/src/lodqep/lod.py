"""Localized orthogonal decomposition: element correctors, corrected coarse
basis and Galerkin compression.

For a coarse element ``T``, a coarse vertex ``z`` of ``T`` and a patch
``w = patch(T, ell)`` the element corrector ``psi`` solves

    (kappa grad psi, grad w) = (1_T kappa grad phi_z, grad w)   for all w,

over fine functions supported in the patch with vanishing Clement
interpolant.  The constraint is imposed with Lagrange multipliers, one per
coarse node whose hat overlaps the patch.  Summing the element correctors
over ``T`` containing ``z`` gives the node corrector and the corrected
basis function ``phi_z - psi_z``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np
import scipy.sparse as sparse

from .errors import AggregationError, FactorizationError, ParameterError, PatchConfigurationError
from .fem import (assemble_mass_full, assemble_stiffness_full, clement, prolongation_full,
                  restrict_interior, stiffness_local)
from .field import check_diffusion
from .linalg import GENERAL, SYMMETRIC_INDEFINITE, factor
from .mesh import coarse_fine_map, element_patch, fine_to_coarse

log = logging.getLogger(__name__)

# fill ratio above which compress switches to dense products
DENSE_FILL = 0.05


class LodContext:
    """Fine-scale data shared read-only by all corrector solves."""

    def __init__(self, coarse, fine, kappa):
        if fine.level <= coarse.level:
            raise ParameterError(
                f"fine level {fine.level} must exceed coarse level {coarse.level}")
        self.coarse = coarse
        self.fine = fine
        self.kappa = check_diffusion(kappa)
        if self.kappa.shape != (fine.n_triangles,):
            raise ParameterError(f"kappa needs {fine.n_triangles} entries")
        self.K_local = stiffness_local(fine, self.kappa)
        self.K = restrict_interior(fine, assemble_stiffness_full(fine, self.kappa))
        self.P_full = prolongation_full(coarse, fine).tocsc()
        self.P = self.P_full[fine.interior_vertices][:, coarse.interior_vertices].tocsc()
        self.clement = clement(coarse, fine, assemble_mass_full(fine), self.P_full)
        self.C = self.clement.matrix.tocsr()
        self.owner = fine_to_coarse(coarse, fine)
        self.fine_of = coarse_fine_map(coarse, fine)

    @property
    def n_fine(self):
        return self.fine.n_interior

    @property
    def n_coarse(self):
        return self.coarse.n_interior

    def patch(self, T, ell):
        return element_patch(self.coarse, T, ell, fine=self.fine, owner=self.owner)

    def element_rhs(self, T, z_vertex):
        """Stiffness action of phi_z restricted to the fine elements of T (interior dofs)."""
        tris = self.fine_of[T]
        verts = self.fine.triangles[tris]
        phi = self.P_full[:, z_vertex].toarray().ravel()[verts]
        contrib = np.einsum("tij,tj->ti", self.K_local[tris], phi)
        dof = self.fine.interior_index[verts]
        keep = dof >= 0
        rhs = np.zeros(self.n_fine)
        np.add.at(rhs, dof[keep], contrib[keep])
        return rhs


@dataclass(frozen=True, eq=False)
class CorrectorSolution:
    element: int
    node: int
    ell: float
    dofs: np.ndarray
    coefficients: np.ndarray
    constraint_residual: float = 0.0
    equation_residual: float = 0.0

    def to_dense(self, n):
        out = np.zeros(n)
        out[self.dofs] = self.coefficients
        return out


class _PatchSystem:
    """Factorized saddle-point system of one patch."""

    def __init__(self, ctx, patch):
        self.dofs = patch.fine_interior_nodes
        nodes = ctx.coarse.interior_index[patch.coarse_nodes_touching]
        self.constraints = nodes[nodes >= 0]
        self.K = ctx.K[self.dofs][:, self.dofs].tocsr()
        self.C = ctx.C[self.constraints][:, self.dofs].tocsr()
        nf, nc = len(self.dofs), len(self.constraints)
        if nc > nf or np.any(np.diff(self.C.indptr) == 0):
            raise PatchConfigurationError(
                f"patch of element {patch.center_element}: {nc} constraints on {nf} dofs, "
                "constraint block is rank deficient")
        S = sparse.bmat([[self.K, self.C.T], [self.C, None]], format="csc")
        try:
            self.lu = factor(S, SYMMETRIC_INDEFINITE)
        except FactorizationError as exc:
            raise PatchConfigurationError(
                f"patch of element {patch.center_element}: saddle-point system singular ({exc})"
            ) from exc

    def solve(self, rhs):
        """Corrector coefficients on the patch dofs for full-length rhs columns."""
        nf = len(self.dofs)
        b = np.zeros((nf + len(self.constraints),) + rhs.shape[1:])
        b[:nf] = rhs[self.dofs]
        x = self.lu.solve(b)
        psi = x[:nf]
        cres = np.abs(self.C @ psi).max(initial=0.0)
        r = self.K @ psi + self.C.T @ x[nf:] - b[:nf]
        eres = np.linalg.norm(r) / max(np.linalg.norm(b[:nf]), np.finfo(float).tiny)
        return psi, float(cres), float(eres)


def _interior_vertices_of(ctx, T):
    verts = ctx.coarse.triangles[T]
    return [int(v) for v in verts if ctx.coarse.interior_index[v] >= 0]


def element_corrector(ctx, patch, z, T):
    """Element corrector for coarse vertex ``z`` (vertex id) of element ``T``."""
    if patch.center_element != T:
        raise ParameterError(f"patch is centred at {patch.center_element}, not {T}")
    if z not in ctx.coarse.triangles[T]:
        raise ParameterError(f"coarse vertex {z} is not a vertex of element {T}")
    if ctx.coarse.interior_index[z] < 0:
        raise ParameterError(f"coarse vertex {z} lies on the boundary")
    system = _PatchSystem(ctx, patch)
    psi, cres, eres = system.solve(ctx.element_rhs(T, z))
    return CorrectorSolution(T, int(z), patch.order, system.dofs, psi, cres, eres)


def node_corrector(parts, n_fine, node=None, expected_elements=None):
    """Sum of the element correctors of one coarse node, as a dense fine vector."""
    elements = [p.element for p in parts]
    if len(set(elements)) != len(elements):
        raise AggregationError(f"duplicate element parts for node {node}: {elements}")
    if node is not None and any(p.node != node for p in parts):
        raise AggregationError(f"parts belong to nodes {sorted({p.node for p in parts})}")
    if expected_elements is not None and set(elements) != set(expected_elements):
        raise AggregationError(
            f"node {node}: parts cover {sorted(elements)}, expected {sorted(expected_elements)}")
    out = np.zeros(n_fine)
    for p in parts:
        out[p.dofs] += p.coefficients
    return out


@dataclass(eq=False)
class LodBasis:
    """Columns are fine coefficients of the corrected basis phi_z - psi_z."""
    B: sparse.csc_matrix
    ell: float
    coarse_level: int
    fine_level: int
    stats: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.B.shape


def _solve_group(ctx, patch, elements, ell):
    system = _PatchSystem(ctx, patch)
    jobs = [(T, z) for T in elements for z in _interior_vertices_of(ctx, T)]
    if not jobs:
        return []
    rhs = np.column_stack([ctx.element_rhs(T, z) for T, z in jobs])
    psi, cres, eres = system.solve(rhs)
    return [CorrectorSolution(T, z, ell, system.dofs, psi[:, i], cres, eres)
            for i, (T, z) in enumerate(jobs)]


def compute_correctors(ctx, ell, threads=1):
    """All element correctors, grouped so identical patches share one factorization.

    Yields lists of :class:`CorrectorSolution` in a deterministic order.
    """
    groups = {}
    for T in range(ctx.coarse.n_triangles):
        patch = ctx.patch(T, ell)
        key = patch.key
        if key in groups:
            groups[key][1].append(T)
        else:
            groups[key] = (patch, [T])
    work = list(groups.values())
    order = math.inf if ell is None else ell
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield from pool.map(lambda g: _solve_group(ctx, g[0], g[1], order), work)
    else:
        for patch, elements in work:
            yield _solve_group(ctx, patch, elements, order)


def build_basis(coarse, fine, kappa, ell, threads=1, ctx=None):
    """Corrected coarse basis with element patches of order ``ell`` (None: global)."""
    if ell is not None and not math.isinf(ell) and ell < 1:
        raise ParameterError(f"localization parameter must be >= 1, got {ell}")
    t0 = time.perf_counter()
    ctx = ctx or LodContext(coarse, fine, kappa)
    Psi = np.zeros((ctx.n_fine, ctx.n_coarse))
    n_solves = n_groups = 0
    cmax = emax = 0.0
    seen = {}
    for group in compute_correctors(ctx, ell, threads):
        n_groups += 1
        for sol in group:
            col = ctx.coarse.interior_index[sol.node]
            Psi[sol.dofs, col] += sol.coefficients
            seen.setdefault(sol.node, []).append(sol.element)
            n_solves += 1
            cmax = max(cmax, sol.constraint_residual)
            emax = max(emax, sol.equation_residual)
    _check_coverage(ctx, seen)
    B = (ctx.P - sparse.csc_matrix(Psi)).tocsc()
    B.eliminate_zeros()
    stats = {"saddle_point_solves": n_solves, "factorizations": n_groups,
             "max_constraint_residual": cmax, "max_equation_residual": emax,
             "seconds": time.perf_counter() - t0}
    log.info("LOD basis level %d/%d ell=%s: %d solves, %d factorizations, %.1fs",
             coarse.level, fine.level, ell, n_solves, n_groups, stats["seconds"])
    return LodBasis(B, math.inf if ell is None else ell, coarse.level, fine.level, stats)


def _check_coverage(ctx, seen):
    tri = ctx.coarse.triangles
    for z in ctx.coarse.interior_vertices:
        expected = set(np.flatnonzero((tri == z).any(axis=1)).tolist())
        got = seen.get(int(z), [])
        if len(got) != len(set(got)) or set(got) != expected:
            raise AggregationError(
                f"node {z}: corrector parts {sorted(got)} do not match elements {sorted(expected)}")


def ideal_basis(ctx):
    """Globally corrected basis, one global saddle-point solve per coarse node.

    Independent of the element-corrector route: the right-hand side is the
    full stiffness action of each coarse hat.
    """
    K, C = ctx.K, ctx.C
    S = sparse.bmat([[K, C.T], [C, None]], format="csc")
    lu = factor(S, GENERAL)
    rhs = np.zeros((S.shape[0], ctx.n_coarse))
    rhs[:ctx.n_fine] = (K @ ctx.P).toarray()
    psi = lu.solve(rhs)[:ctx.n_fine]
    B = (ctx.P - sparse.csc_matrix(psi)).tocsc()
    return LodBasis(B, math.inf, ctx.coarse.level, ctx.fine.level, {"saddle_point_solves": 1})


def compress(B, X, symmetric=None):
    """Galerkin restriction B^T X B as a dense matrix."""
    Bm = B.B if isinstance(B, LodBasis) else B
    if X.shape[0] != Bm.shape[0] or X.shape[1] != Bm.shape[0]:
        raise ParameterError(f"cannot compress {X.shape} with basis {Bm.shape}")
    if sparse.issparse(Bm) and Bm.nnz > DENSE_FILL * Bm.shape[0] * Bm.shape[1]:
        # large patches fill B in; BLAS on the dense copy beats sparse products
        Bm = Bm.toarray()
    XB = X @ Bm
    C = Bm.T @ XB
    C = C.toarray() if sparse.issparse(C) else np.asarray(C)
    if symmetric is None:
        diff = X - X.T
        diff = abs(diff).max() if sparse.issparse(diff) else np.abs(diff).max()
        scale = abs(X).max() if sparse.issparse(X) else np.abs(X).max()
        symmetric = diff <= 1e-12 * max(scale, np.finfo(float).tiny)
    if symmetric:
        C = 0.5 * (C + C.T)
    return C


def basis_function_grid(ctx, basis, z_vertex):
    """Nodal values (x, y, value) of one corrected basis function on all fine vertices."""
    col = ctx.coarse.interior_index[z_vertex]
    if col < 0:
        raise ParameterError(f"coarse vertex {z_vertex} lies on the boundary")
    values = np.zeros(ctx.fine.n_vertices)
    values[ctx.fine.interior_vertices] = basis.B[:, col].toarray().ravel()
    return np.column_stack([ctx.fine.vertices, values])
