"""Quadratic eigenvalue problems (K + lam D + lam^2 M) u = 0.

Both scales use the same first companion linearization: with
``x1 = u`` and ``x2 = lam u`` the operator

    A = [[-K^{-1} D, -K^{-1} M],
         [ I,          0       ]]

has eigenvalues ``mu = 1/lam``, so the smallest |lam| are the largest |mu|.
"""
from dataclasses import dataclass, field
import json

import numpy as np
import scipy.linalg
import scipy.sparse as sparse

from .errors import ParameterError, SolverError
from .linalg import SPD, EigenPair, arnoldi_topk, dense_eigen, factor

MU_CUTOFF = 1e-12


@dataclass(frozen=True, eq=False)
class QepSystem:
    K: object
    D: object
    M: object
    scale: str = "fine"

    @property
    def n(self):
        return self.K.shape[0]


def _sort_key(pair):
    return (abs(pair.value), -pair.value.imag)


@dataclass(eq=False)
class Spectrum:
    """Eigenpairs sorted ascending by |lam|, ties by imaginary part descending."""
    pairs: list
    scale: str = "fine"
    H: float = None
    ell: float = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = sorted(self.pairs, key=_sort_key)

    def __len__(self):
        return len(self.pairs)

    @property
    def eigenvalues(self):
        return np.array([p.value for p in self.pairs], dtype=complex)

    @property
    def residuals(self):
        return np.array([p.residual for p in self.pairs])

    def is_conjugate_closed(self, rtol=1e-8):
        vals = self.eigenvalues
        used = np.zeros(len(vals), dtype=bool)
        for i, v in enumerate(vals):
            if used[i] or v.imag == 0:
                continue
            dist = np.abs(vals - np.conj(v))
            dist[used] = np.inf
            dist[i] = np.inf
            j = int(np.argmin(dist))
            if dist[j] > rtol * abs(v):
                return False
            used[i] = used[j] = True
        return True

    def to_dict(self):
        return {"scale": self.scale, "H": self.H, "ell": self.ell,
                "eigenvalues": [{"re": p.value.real, "im": p.value.imag, "residual": p.residual}
                                for p in self.pairs],
                "metadata": self.metadata}

    @classmethod
    def from_dict(cls, doc):
        pairs = [EigenPair(complex(e["re"], e["im"]), None, float(e["residual"]))
                 for e in doc["eigenvalues"]]
        return cls(pairs, doc.get("scale", "fine"), doc.get("H"), doc.get("ell"),
                   dict(doc.get("metadata") or {}))

    def to_json(self):
        return json.dumps(self.to_dict())


def normalize_vector(u):
    """Unit 2-norm with the first non-negligible component real positive."""
    u = np.asarray(u, dtype=complex)
    u = u / np.linalg.norm(u)
    big = np.flatnonzero(np.abs(u) > 1e-8 * np.abs(u).max())
    phase = u[big[0]] / abs(u[big[0]])
    return u / phase


def _norm1(X):
    if sparse.issparse(X):
        return float(abs(X).sum(axis=0).max()) if X.nnz else 0.0
    return float(np.linalg.norm(X, 1))


def qep_residual(K, D, M, lam, u, norms=None):
    """Normwise backward error ||Q(lam) u|| / ((|K| + |lam||D| + |lam|^2|M|) ||u||)."""
    nK, nD, nM = norms if norms is not None else (_norm1(K), _norm1(D), _norm1(M))
    r = K @ u + lam * (D @ u) + lam ** 2 * (M @ u)
    a = abs(lam)
    return float(np.linalg.norm(r) / ((nK + a * nD + a * a * nM) * np.linalg.norm(u)))


def linearized_apply(K_fact, D, M):
    """Action of the linearized operator on stacked (x1, x2) vectors."""
    n = K_fact.n
    if D.shape != (n, n) or M.shape != (n, n):
        raise ParameterError(f"dimension mismatch: K is {n}x{n}, D {D.shape}, M {M.shape}")

    def apply(x):
        x = np.asarray(x)
        if x.shape != (2 * n,):
            raise ParameterError(f"expected vector of length {2 * n}, got {x.shape}")
        x1, x2 = x[:n], x[n:]
        out = np.empty_like(x, dtype=np.result_type(x, float))
        out[:n] = -K_fact.solve(D @ x1 + M @ x2)
        out[n:] = x1
        return out

    return apply


def _to_qep_pairs(mu_pairs, n, K, D, M):
    norms = (_norm1(K), _norm1(D), _norm1(M))
    pairs = []
    for p in mu_pairs:
        if abs(p.value) < MU_CUTOFF:
            continue
        lam = 1.0 / p.value
        u = p.vector[:n]
        if np.linalg.norm(u) == 0:
            continue
        u = normalize_vector(u)
        pairs.append(EigenPair(complex(lam), u, qep_residual(K, D, M, lam, u, norms)))
    return pairs


def _refine(pairs, K, D, M, max_shift=1e-6):
    """Polish eigenvalues with the two-sided Rayleigh functional.

    K, D and M are real symmetric, so u itself is a left eigenvector of the
    (complex symmetric) QEP and the root of u^T Q(lam) u = 0 nearest the
    Ritz value is accurate to second order in the residual.  Shifts above
    ``max_shift`` relative are refused.
    """
    norms = (_norm1(K), _norm1(D), _norm1(M))
    out = []
    for p in pairs:
        u = p.vector
        a, b, c = u @ (M @ u), u @ (D @ u), u @ (K @ u)
        if a != 0:
            roots = np.roots([a, b, c])
            lam = complex(roots[np.argmin(np.abs(roots - p.value))])
            if abs(lam - p.value) <= max_shift * abs(p.value):
                p = EigenPair(lam, u, qep_residual(K, D, M, lam, u, norms))
        out.append(p)
    return out


def solve_fine(system, nev=8, tol=1e-10, seed=0, ncv=None, K_fact=None):
    """``nev`` smallest-magnitude eigenpairs of a sparse QEP by Arnoldi.

    Ritz values are polished by a Rayleigh functional step (see ``_refine``).
    """
    n = system.n
    if nev > 2 * n:
        raise ParameterError(f"nev={nev} exceeds 2n={2 * n}")
    if K_fact is None:
        K_fact = factor(system.K, SPD)
    apply = linearized_apply(K_fact, system.D, system.M)
    mu_pairs = arnoldi_topk(apply, 2 * n, nev, tol=tol, seed=seed, ncv=ncv)
    pairs = _to_qep_pairs(mu_pairs, n, system.K, system.D, system.M)
    pairs = _refine(pairs, system.K, system.D, system.M)
    spec = Spectrum(pairs, scale="fine", metadata={"tol": tol, "nev": nev, "seed": seed})
    if not spec.is_conjugate_closed():
        raise SolverError("fine spectrum is not closed under conjugation")
    return spec


def linearized_matrix(K, D, M):
    """Dense linearized matrix for small (coarse) systems."""
    K, D, M = (np.asarray(X.toarray() if sparse.issparse(X) else X, dtype=float)
               for X in (K, D, M))
    n = K.shape[0]
    try:
        cho = scipy.linalg.cho_factor(K)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"coarse stiffness matrix is not positive definite: {exc}") from exc
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = -scipy.linalg.cho_solve(cho, D)
    A[:n, n:] = -scipy.linalg.cho_solve(cho, M)
    A[n:, :n] = np.eye(n)
    return A


def solve_coarse(Kc, Dc, Mc, H=None, ell=None):
    """All 2 N_H eigenpairs of a dense coarse QEP."""
    n = Kc.shape[0]
    if n > 2500:
        raise ParameterError(f"coarse system too large for dense solve: {n}")
    A = linearized_matrix(Kc, Dc, Mc)
    pairs = _to_qep_pairs(dense_eigen(A), n, Kc, Dc, Mc)
    return Spectrum(pairs, scale="coarse", H=H, ell=ell)


@dataclass(frozen=True)
class Match:
    lambda_ref: complex
    lambda_H: complex
    rel_error: float
    flagged: bool


def match_spectra(reference, approx, count, flag_ratio=0.5):
    """Greedy nearest matching of the ``count`` smallest reference eigenvalues.

    A match is flagged when its distance exceeds ``flag_ratio * |lam_ref|``,
    signalling that the coarse eigenvalue is not in a neighbourhood of the
    reference one.
    """
    ref = reference.eigenvalues
    app = approx.eigenvalues
    if len(ref) < count or len(app) < count:
        raise ParameterError(
            f"need {count} eigenvalues, have {len(ref)} reference and {len(app)} approximate")
    used = np.zeros(len(app), dtype=bool)
    out = []
    for lam in ref[:count]:
        dist = np.abs(app - lam)
        dist[used] = np.inf
        j = int(np.argmin(dist))
        used[j] = True
        out.append(Match(complex(lam), complex(app[j]), float(dist[j] / abs(lam)),
                         bool(dist[j] > flag_ratio * abs(lam))))
    return out
