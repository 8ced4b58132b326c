"""Dense numerical kernels behind the engine: eigen/SVD/QR/polynomial roots.

Thin contracts over LAPACK (symmetric and nonsymmetric eigensolvers run
balanced Hessenberg/QR iterations internally; SVD is Golub-Kahan style).
Each wrapper pins the residual and orthogonality guarantees the rest of the
engine relies on, with deterministic ordering conventions.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, SolverError


def symmetric_eigen(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Requires symmetry to 1e-12 relative; A V = V diag(lam) holds to
    1e-10 ||A|| and V is orthonormal to 1e-12.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError("symmetric_eigen needs a square matrix")
    scale = np.max(np.abs(A)) or 1.0
    if np.max(np.abs(A - A.conj().T)) > 1e-12 * scale:
        raise InputError("matrix is not symmetric to 1e-12 relative")
    lam, V = np.linalg.eigh(A)
    return lam, V


def svd(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(U, singular values descending, Vh) with A = U @ diag(s) @ Vh."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise InputError("svd needs a matrix")
    if not np.all(np.isfinite(A)):
        raise InputError("svd needs finite entries")
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    return U, s, Vh


def general_eigenvalues(A: np.ndarray, validate: bool = False) -> np.ndarray:
    """All complex eigenvalues of a square matrix, sorted by (real, imag).

    For real input, complex eigenvalues come in exact conjugate pairs. With
    validate=True (intended for n <= 8) the characteristic-polynomial
    residual is checked at every eigenvalue.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError("general_eigenvalues needs a square matrix")
    ev = np.linalg.eigvals(A)
    order = np.lexsort((ev.imag, ev.real))
    ev = ev[order]
    if validate:
        n = A.shape[0]
        if n > 12:
            raise InputError("characteristic-polynomial validation is for small n")
        coeffs = np.poly(A)
        scale = np.max(np.abs(coeffs))
        res = np.max(np.abs(np.polyval(coeffs, ev))) / scale
        if res > 1e-6:
            raise SolverError(f"eigenvalue residual {res:.2e} too large")
    return ev


def companion_roots(coeffs) -> np.ndarray:
    """Roots of a polynomial given by descending coefficients.

    Builds the (balanced) companion matrix, takes its eigenvalues and applies
    one Newton polish per root. Leading coefficient must exceed 1e-300 after
    rescaling by the largest coefficient.
    """
    c = np.atleast_1d(np.asarray(coeffs, dtype=complex))
    if c.size < 2:
        return np.empty(0, dtype=complex)
    scale = np.max(np.abs(c))
    if scale == 0 or not np.isfinite(scale):
        raise InputError("zero or non-finite polynomial")
    c = c / scale
    if np.abs(c[0]) < 1e-300:
        raise InputError("degenerate leading coefficient")
    roots = companion_roots_batch(c[None, :])[0]
    return roots


def companion_roots_batch(P: np.ndarray) -> np.ndarray:
    """Row-wise polynomial roots for a batch of equal-degree coefficient rows.

    P has shape (B, d+1), descending coefficients, nonzero leading column.
    Returns (B, d) roots, each polished by one Newton step on the polynomial.
    """
    P = np.asarray(P, dtype=complex)
    if P.ndim == 1:
        P = P[None, :]
    B, K1 = P.shape
    d = K1 - 1
    lead = P[:, 0]
    if np.any(np.abs(lead) < 1e-300):
        raise InputError("degenerate leading coefficient in batch")
    Pm = P / lead[:, None]
    C = np.zeros((B, d, d), dtype=complex)
    if d > 1:
        idx = np.arange(d - 1)
        C[:, idx + 1, idx] = 1.0
    C[:, 0, :] = -Pm[:, 1:]
    roots = np.linalg.eigvals(C)
    # one vectorized Newton step: Horner for P and P'
    val = np.zeros_like(roots)
    der = np.zeros_like(roots)
    for k in range(K1):
        der = der * roots + val
        val = val * roots + Pm[:, k, None]
    with np.errstate(all="ignore"):
        step = np.where(np.abs(der) > 1e-300, val / der, 0.0)
        step = np.where(np.abs(step) < 0.5 * (1 + np.abs(roots)), step, 0.0)
    return roots - step


def qr_haar(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR with R-sign correction."""
    if n < 1:
        raise InputError("qr_haar needs n >= 1")
    G = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    sgn = np.sign(np.diag(R))
    sgn[sgn == 0] = 1.0
    return Q * sgn


def operator_norm_estimate(
    A: np.ndarray, iters: int = 300, seed: int = 0
) -> float:
    """Power-iteration estimate of the spectral norm (a lower bound)."""
    A = np.asarray(A)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = A.conj().T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(A @ v))
