"""Dense linear algebra used by the GP engine and the HHL pipeline.

Everything here is a thin, checked layer over LAPACK (via numpy/scipy).
Inputs are never modified.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import (
    NoConvergence,
    NonHermitian,
    NotPositiveDefinite,
    NotPSD,
    ZeroMatrix,
)

HERMITIAN_RTOL = 1e-12
PSD_CLAMP_RTOL = 1e-10
COND_CUTOFF_RTOL = 1e-14


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # ascending, real
    eigenvectors: np.ndarray  # orthonormal columns


def _max_abs(A: np.ndarray) -> float:
    return float(np.max(np.abs(A))) if A.size else 0.0


def is_hermitian(A: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    scale = _max_abs(A)
    return bool(np.all(np.abs(A - A.conj().T) <= rtol * scale))


def check_hermitian(A: np.ndarray, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    A = np.asarray(A)
    if not is_hermitian(A, rtol):
        raise NonHermitian(f"matrix of shape {A.shape} is not Hermitian")
    return A


def eigh(A: np.ndarray) -> EigenDecomposition:
    """Spectral decomposition of a Hermitian matrix, eigenvalues ascending."""
    A = check_hermitian(A)
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NoConvergence(str(exc)) from exc
    return EigenDecomposition(w, V)


def cholesky_logdet(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric positive definite ``K`` and
    ``log|K|`` computed as ``2 * sum(log(diag(L)))``."""
    K = check_hermitian(np.asarray(K, dtype=float))
    try:
        L = scipy.linalg.cholesky(K, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky failed: {exc}") from exc
    diag = np.diag(L)
    if np.any(diag <= 0):
        raise NotPositiveDefinite("non-positive pivot in Cholesky factor")
    return L, float(2.0 * np.sum(np.log(diag)))


def psd_sqrt(K: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root ``kappa`` with ``kappa @ kappa == K``.

    Eigenvalues within ``1e-10 * lambda_max`` below zero are clamped to zero;
    anything more negative raises :class:`NotPSD`.
    """
    w, V = eigh(K)
    top = max(float(w[-1]), 0.0)
    if w[0] < -PSD_CLAMP_RTOL * top:
        raise NotPSD(f"min eigenvalue {w[0]:.3e} below tolerance (max {top:.3e})")
    w = np.where(w < PSD_CLAMP_RTOL * top, np.clip(w, 0.0, None), w)
    root = (V * np.sqrt(w)) @ V.conj().T
    # symmetrise away rounding so the result is Hermitian to machine precision
    root = 0.5 * (root + root.conj().T)
    if np.isrealobj(K):
        root = root.real
    return root


def condition_number(A: np.ndarray) -> float:
    """``lambda_max / lambda_min`` for a PSD matrix.

    ``lambda_min`` is the smallest eigenvalue above ``1e-14 * lambda_max``, so
    exactly singular directions are ignored (effective condition number).
    """
    w = eigh(A).eigenvalues
    top = float(w[-1])
    if top <= 0.0:
        raise ZeroMatrix("largest eigenvalue is not positive")
    above = w[w > COND_CUTOFF_RTOL * top]
    if above.size == 0:  # pragma: no cover - top itself is always above
        return float("inf")
    return top / float(above[0])


def solve_psd(K: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Dense solve of ``K x = y`` for symmetric positive definite ``K``."""
    L, _ = cholesky_logdet(K)
    return scipy.linalg.cho_solve((L, True), np.asarray(y, dtype=float))


def diagonal_scaling(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric diagonal scaling ``D M D`` with ``D = diag(M_ii^-1/2)``.

    Returns the scaled matrix (unit diagonal) and the diagonal of ``D``.
    """
    M = check_hermitian(M)
    d = np.real(np.diag(M))
    if np.any(d <= 0):
        raise NotPositiveDefinite("diagonal scaling needs a positive diagonal")
    dinv_sqrt = 1.0 / np.sqrt(d)
    scaled = M * np.outer(dinv_sqrt, dinv_sqrt)
    idx = np.diag_indices_from(scaled)
    scaled[idx] = 1.0
    return scaled, dinv_sqrt


def power_iteration_bound(A: np.ndarray, iters: int = 500, tol: float = 1e-12) -> float:
    """Rayleigh-quotient estimate of the largest eigenvalue of a PSD matrix."""
    A = np.asarray(A)
    n = A.shape[0]
    v = np.ones(n, dtype=A.dtype) / np.sqrt(n)
    est = 0.0
    for _ in range(iters):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(np.real(np.vdot(v, A @ v)))
        if abs(new - est) <= tol * abs(new):
            return new
        est = new
    return est
