"""Sparse factorizations, dense eigendecomposition and a restarted Arnoldi
(Krylov-Schur) iteration over an abstract operator.
"""
from dataclasses import dataclass
import logging

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, FactorizationError, ParameterError, SolverError

log = logging.getLogger(__name__)

SPD = "SPD"
SYMMETRIC_INDEFINITE = "SymmetricIndefinite"
GENERAL = "GeneralSquare"
KINDS = (SPD, SYMMETRIC_INDEFINITE, GENERAL)


@dataclass(frozen=True)
class EigenPair:
    value: complex
    vector: np.ndarray
    residual: float


def sort_key_magnitude(value, descending=True):
    """Sort by |value| (descending by default), ties by imaginary part descending."""
    mag = abs(value)
    return (-mag if descending else mag, -value.imag)


class Factorization:
    """Sparse LU factorization with a real/complex ``solve``.

    Instances are read-only after construction; concurrent ``solve`` calls
    against one factorization are safe.
    """

    def __init__(self, matrix, kind=GENERAL):
        if kind not in KINDS:
            raise ParameterError(f"unknown factorization kind {kind!r}")
        A = sparse.csc_matrix(matrix, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ParameterError(f"matrix must be square, got {A.shape}")
        self.kind = kind
        self.n = A.shape[0]
        self.norm_fro = spla.norm(A) if A.nnz else 0.0
        if kind == SPD:
            opts = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                        options=dict(SymmetricMode=True))
        elif kind == SYMMETRIC_INDEFINITE:
            opts = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                        options=dict(SymmetricMode=True))
        else:
            opts = dict(permc_spec="COLAMD")
        try:
            self._lu = spla.splu(A, **opts)
        except RuntimeError as exc:
            colnorm = np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
            j = int(np.argmin(colnorm))
            raise FactorizationError(
                f"{kind} factorization of {A.shape} matrix failed: {exc}; zero pivot during "
                f"elimination (smallest column norm {colnorm[j]:.3e} at column {j})") from exc
        udiag = self._lu.U.diagonal()
        if kind == SPD and np.any(udiag <= 0):
            bad = int(np.argmin(udiag))
            raise FactorizationError(
                f"matrix is not positive definite: pivot {bad} = {udiag[bad]:.3e}")
        small = np.abs(udiag) <= 1e-14 * max(np.abs(udiag).max(initial=0.0), 1e-300)
        if np.any(small):
            bad = int(np.flatnonzero(small)[0])
            raise FactorizationError(
                f"matrix is singular to working precision: pivot {bad} = {udiag[bad]:.3e}")

    def solve(self, b):
        b = np.asarray(b)
        if np.iscomplexobj(b):
            return self._lu.solve(np.ascontiguousarray(b.real)) + 1j * self._lu.solve(
                np.ascontiguousarray(b.imag))
        return self._lu.solve(np.asarray(b, dtype=float))


def factor(matrix, kind=GENERAL):
    return Factorization(matrix, kind)


def dense_eigen(A):
    """All eigenpairs of a dense real matrix.

    Backed by LAPACK's Hessenberg QR (``dgeev``), whose shifted QR sweeps
    are capped at 30 iterations per eigenvalue; exceeding the cap raises
    :class:`SolverError`.  Complex eigenvalues of a real input come out as
    exact conjugate pairs with conjugate eigenvectors.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParameterError(f"dense_eigen needs a square matrix, got {A.shape}")
    if A.shape[0] > 5000:
        raise ParameterError("dense_eigen is limited to n <= 5000")
    try:
        w, V = scipy.linalg.eig(A, check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SolverError(f"dense eigensolver did not converge: {exc}") from exc
    V = V / np.linalg.norm(V, axis=0)
    res = np.linalg.norm(A @ V - V * w, axis=0)
    bound = 1e-8 * max(np.linalg.norm(A), np.finfo(float).tiny)
    if np.any(res > bound):
        log.warning("dense_eigen: max residual %.2e exceeds %.2e", res.max(), bound)
    return [EigenPair(complex(w[i]), V[:, i], float(res[i])) for i in range(len(w))]


def _orthogonalize(V, w):
    """Two passes of classical Gram-Schmidt of w against the columns of V."""
    h = V.T @ w
    w = w - V @ h
    h2 = V.T @ w
    w = w - V @ h2
    return w, h + h2


def _select_wanted(theta, k):
    """Indices of the k largest-magnitude values, padded to keep conjugate pairs."""
    order = sorted(range(len(theta)), key=lambda i: sort_key_magnitude(theta[i]))
    k = min(k, len(order))
    if 0 < k < len(order):
        last, nxt = theta[order[k - 1]], theta[order[k]]
        if last.imag != 0 and np.isclose(nxt, np.conj(last), rtol=1e-10, atol=0):
            k += 1
    return order[:k]


def arnoldi_topk(apply, n, k, tol=1e-10, max_restarts=500, seed=0, ncv=None):
    """Largest-magnitude eigenpairs of a real linear operator.

    Krylov-Schur restarted Arnoldi in real arithmetic with two-pass
    classical Gram-Schmidt.  Returns at least ``k`` pairs (one more when a
    conjugate pair straddles the cut) sorted by magnitude descending; each
    satisfies ``||A v - mu v|| <= tol * |mu|`` with ``||v|| = 1``.
    """
    if not 1 <= k <= n:
        raise ParameterError(f"need 1 <= k <= n, got k={k}, n={n}")
    m = ncv or max(2 * k + 1, 20)
    m = min(m, n)
    rng = np.random.default_rng(seed)
    V = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m))
    v0 = rng.standard_normal(n)
    V[:, 0] = v0 / np.linalg.norm(v0)
    p = 0
    target = 0.5 * tol
    residuals = None

    for restart in range(max_restarts + 1):
        for j in range(p, m):
            w = np.asarray(apply(V[:, j]), dtype=float)
            scale = np.linalg.norm(w)
            w, h = _orthogonalize(V[:, :j + 1], w)
            H[:j + 1, j] = h
            beta = np.linalg.norm(w)
            if beta <= 1e-12 * max(scale, np.finfo(float).tiny):
                H[j + 1, j] = 0.0
                V[:, j + 1] = 0.0
                if j + 1 < n:
                    r, _ = _orthogonalize(V[:, :j + 1], rng.standard_normal(n))
                    if np.linalg.norm(r) > 0:
                        V[:, j + 1] = r / np.linalg.norm(r)
            else:
                H[j + 1, j] = beta
                V[:, j + 1] = w / beta

        Hm = H[:m, :m]
        theta, Y = scipy.linalg.eig(Hm)
        Y = Y / np.linalg.norm(Y, axis=0)
        ritz_res = abs(H[m, m - 1]) * np.abs(Y[m - 1, :])
        wanted = _select_wanted(theta, k)
        residuals = ritz_res[wanted] / np.maximum(np.abs(theta[wanted]), np.finfo(float).tiny)
        if np.all(residuals <= target):
            X = V[:, :m] @ Y[:, wanted]
            pairs = []
            for col, i in enumerate(wanted):
                x = X[:, col] / np.linalg.norm(X[:, col])
                r = np.linalg.norm(_apply_complex(apply, x) - theta[i] * x)
                pairs.append(EigenPair(complex(theta[i]), x, float(r)))
            rel = np.array([pr.residual / max(abs(pr.value), np.finfo(float).tiny)
                            for pr in pairs])
            if np.all(rel <= tol):
                log.debug("arnoldi converged after %d restarts", restart)
                return sorted(pairs, key=lambda pr: sort_key_magnitude(pr.value))
            residuals = rel
            target = max(0.1 * target, 1e-16)

        if abs(H[m, m - 1]) == 0.0 and m == n:
            # invariant subspace of full dimension; nothing left to gain
            break

        # Krylov-Schur truncation to the p largest-magnitude Ritz values
        mags = np.sort(np.abs(theta))[::-1]
        p = min(max(len(wanted) + (m - len(wanted)) // 2, len(wanted) + 1), m - 1)
        while 0 < p < m and np.isclose(mags[p - 1], mags[p], rtol=1e-12, atol=0):
            p += 1
        if p >= m - 1:
            p = len(wanted)
        thr = 0.5 * (mags[p - 1] + mags[p]) if p < m else 0.0
        T, Q, sdim = scipy.linalg.schur(Hm, output="real",
                                        sort=lambda re, im: np.hypot(re, im) > thr)
        p = int(sdim)
        if p < m and p > 0 and T[p, p - 1] != 0.0:
            p += 1
        if p >= m:
            p = m - 1
        V[:, :p] = V[:, :m] @ Q[:, :p]
        V[:, p] = V[:, m]
        b = H[m, m - 1] * Q[m - 1, :p]
        H[:] = 0.0
        H[:p, :p] = T[:p, :p]
        H[p, :p] = b

    raise ConvergenceError(
        f"Arnoldi did not reach tol={tol:g} within {max_restarts} restarts "
        f"(subspace size {m}; clustered spectra need a larger ncv); "
        f"relative residuals {np.array2string(np.asarray(residuals), precision=2)}",
        residuals=residuals)


def _apply_complex(apply, x):
    if np.iscomplexobj(x):
        return np.asarray(apply(np.ascontiguousarray(x.real)), dtype=float) + 1j * np.asarray(
            apply(np.ascontiguousarray(x.imag)), dtype=float)
    return np.asarray(apply(x), dtype=float)
