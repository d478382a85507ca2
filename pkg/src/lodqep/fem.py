"""P1 assembly of stiffness, mass and damping matrices, prolongation and
Clement quasi-interpolation.

All coefficients are constant per element, so element matrices are exact
closed forms.  Homogeneous Dirichlet conditions are realised by keeping
interior vertices only; the ``*_full`` variants keep every vertex.
"""
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sparse

from .errors import ParameterError, SolverFailure
from .field import check_diffusion, eval_per_element, field_from_dict

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def _element_gradients(mesh):
    """Gradients of the three barycentric coordinates per triangle, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty(p.shape)
    g[:, 0, 0] = y[:, 1] - y[:, 2]
    g[:, 1, 0] = y[:, 2] - y[:, 0]
    g[:, 2, 0] = y[:, 0] - y[:, 1]
    g[:, 0, 1] = x[:, 2] - x[:, 1]
    g[:, 1, 1] = x[:, 0] - x[:, 2]
    g[:, 2, 1] = x[:, 1] - x[:, 0]
    return g / det[:, None, None]


def stiffness_local(mesh, kappa):
    """Element stiffness matrices kappa_T |T| grad(phi_i).grad(phi_j), shape (nt, 3, 3)."""
    g = _element_gradients(mesh)
    return (kappa * mesh.areas)[:, None, None] * np.einsum("tik,tjk->tij", g, g)


def mass_local(mesh, weight):
    return (weight * mesh.areas)[:, None, None] * _MASS_REF


def _scatter(mesh, local, elements=None, chunks=1):
    """Sum element matrices into a full (vertices x vertices) CSR matrix.

    With ``chunks > 1`` elements are summed in contiguous blocks that are
    merged in block order, so the result does not depend on scheduling.
    """
    tri = mesh.triangles if elements is None else mesh.triangles[elements]
    nv = mesh.n_vertices
    blocks = np.array_split(np.arange(len(tri)), max(1, int(chunks)))
    total = sparse.csr_matrix((nv, nv))
    for b in blocks:
        t = tri[b]
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        part = sparse.coo_matrix((local[b].ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
        total = total + part
    total.sum_duplicates()
    total.sort_indices()
    return total


def restrict_interior(mesh, X):
    idx = mesh.interior_vertices
    return X[idx][:, idx].tocsr()


def assemble_stiffness_full(mesh, kappa, chunks=1):
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != (mesh.n_triangles,):
        raise ParameterError(f"kappa needs {mesh.n_triangles} entries, got {kappa.shape}")
    return _scatter(mesh, stiffness_local(mesh, kappa), chunks=chunks)


def assemble_stiffness(mesh, kappa, chunks=1):
    """Stiffness matrix (kappa grad u, grad v) over interior vertices.

    Raises :class:`AssumptionViolation` unless kappa > 0 everywhere.
    """
    check_diffusion(kappa)
    return restrict_interior(mesh, assemble_stiffness_full(mesh, kappa, chunks))


def assemble_mass_full(mesh, weight=None, chunks=1):
    weight = np.ones(mesh.n_triangles) if weight is None else np.asarray(weight, dtype=float)
    if weight.shape != (mesh.n_triangles,):
        raise ParameterError(f"weight needs {mesh.n_triangles} entries, got {weight.shape}")
    return _scatter(mesh, mass_local(mesh, weight), chunks=chunks)


def assemble_mass(mesh, weight=None, chunks=1):
    """Weighted mass matrix (w u, v) over interior vertices."""
    return restrict_interior(mesh, assemble_mass_full(mesh, weight, chunks))


@dataclass(frozen=True)
class MassDamping:
    weight: object

    def to_dict(self):
        return {"type": "mass", "weight": self.weight.to_dict()}


@dataclass(frozen=True)
class StiffnessDamping:
    weight: object

    def to_dict(self):
        return {"type": "stiffness", "weight": self.weight.to_dict()}


@dataclass(frozen=True)
class ProportionalDamping:
    alpha0: float
    alpha1: float

    def to_dict(self):
        return {"type": "proportional", "alpha0": self.alpha0, "alpha1": self.alpha1}


def damping_from_dict(doc):
    kind = doc.get("type")
    if kind == "mass":
        return MassDamping(field_from_dict(doc["weight"]))
    if kind == "stiffness":
        return StiffnessDamping(field_from_dict(doc["weight"]))
    if kind == "proportional":
        return ProportionalDamping(float(doc.get("alpha0", 0.0)), float(doc.get("alpha1", 0.0)))
    raise ParameterError(f"unknown damping type {kind!r}")


def assemble_damping(mesh, spec, K=None, M=None):
    """Damping matrix for ``spec``; ``K``/``M`` are reused for proportional damping."""
    if isinstance(spec, MassDamping):
        return assemble_mass(mesh, eval_per_element(spec.weight, mesh))
    if isinstance(spec, StiffnessDamping):
        w = eval_per_element(spec.weight, mesh)
        return restrict_interior(mesh, assemble_stiffness_full(mesh, w))
    if isinstance(spec, ProportionalDamping):
        if K is None:
            raise ParameterError("proportional damping needs the stiffness matrix")
        if M is None:
            M = assemble_mass(mesh)
        return (spec.alpha0 * K + spec.alpha1 * M).tocsr()
    raise ParameterError(f"unsupported damping spec {spec!r}")


def prolongation_full(coarse, fine):
    """Nodal values of every coarse hat at every fine vertex (all vertices)."""
    if fine.level < coarse.level:
        raise ParameterError("prolongation needs fine.level >= coarse.level")
    n = coarse.n
    s = fine.vertices[:, 0] * n
    t = fine.vertices[:, 1] * n
    i = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(t).astype(np.int64), 0, n - 1)
    s = s - i
    t = t - j
    ll = j * (n + 1) + i
    lr, ul, ur = ll + 1, ll + n + 1, ll + n + 2
    lower = t <= s
    # barycentric weights of (ll, lr, ur) or (ll, ur, ul)
    w_ll = np.where(lower, 1.0 - s, 1.0 - t)
    w_mid = np.where(lower, s - t, t - s)
    mid = np.where(lower, lr, ul)
    w_ur = np.where(lower, t, s)
    rows = np.tile(np.arange(fine.n_vertices), 3)
    cols = np.concatenate([ll, mid, ur])
    vals = np.concatenate([w_ll, w_mid, w_ur])
    keep = vals > 1e-14
    P = sparse.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                          shape=(fine.n_vertices, coarse.n_vertices)).tocsr()
    P.sum_duplicates()
    return P


def prolongation(coarse, fine):
    """Interior prolongation V_H -> V_h, shape (N_h, N_H)."""
    P = prolongation_full(coarse, fine)
    return P[fine.interior_vertices][:, coarse.interior_vertices].tocsr()


@dataclass(frozen=True, eq=False)
class ClementOperator:
    """Rows z map interior fine coefficients to (v, phi_z) / (1, phi_z)."""
    matrix: sparse.csr_matrix
    scaling: np.ndarray

    def __call__(self, v):
        return self.matrix @ v


def clement(coarse, fine, M_h_full=None, P_full=None):
    """Clement quasi-interpolation matrix over interior coarse and fine nodes.

    ``M_h_full`` must be the unweighted mass matrix over *all* fine
    vertices: the denominator (1, phi_z) integrates over the full support
    of the coarse hat, including elements touching the boundary.
    """
    if M_h_full is None:
        M_h_full = assemble_mass_full(fine)
    if P_full is None:
        P_full = prolongation_full(coarse, fine)
    if M_h_full.shape != (fine.n_vertices, fine.n_vertices):
        raise ParameterError("clement needs the full (untrimmed) fine mass matrix")
    PtM = (P_full.T @ M_h_full).tocsr()
    denom = np.asarray(PtM.sum(axis=1)).ravel()
    denom = denom[coarse.interior_vertices]
    if np.any(denom <= 0):
        raise SolverFailure("zero Clement denominator; mesh assembly is inconsistent")
    scaling = 1.0 / denom
    rows = PtM[coarse.interior_vertices][:, fine.interior_vertices]
    C = (sparse.diags(scaling) @ rows).tocsr()
    C.eliminate_zeros()
    return ClementOperator(C, scaling)


def export_matrix_market(path, X, comment=""):
    scipy.io.mmwrite(str(path), sparse.coo_matrix(X), comment=comment)
