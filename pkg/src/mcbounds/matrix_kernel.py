"""Dense symmetric linear algebra helpers."""

from __future__ import annotations

import numpy as np
import scipy.linalg

SYM_RTOL = 1e-12
PD_RTOL = 1e-12
FULL_EIG_MAX_DIM = 64


class SymmetryError(ValueError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    """Matrix is not numerically positive definite."""

    def __init__(self, lambda_min: float, msg: str | None = None):
        self.lambda_min = float(lambda_min)
        super().__init__(msg or f"matrix not positive definite (lambda_min={lambda_min:.3e})")


def as_sym(M) -> np.ndarray:
    """Validate a square symmetric matrix and return it as a float array."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SymmetryError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SymmetryError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYM_RTOL * scale:
        raise SymmetryError("matrix is not symmetric")
    return M


def eig_extremes(M) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    M = as_sym(M)
    n = M.shape[0]
    if n <= FULL_EIG_MAX_DIM:
        w = np.linalg.eigvalsh(M)
        return float(w[0]), float(w[-1])
    lo = scipy.linalg.eigh(M, eigvals_only=True, subset_by_index=[0, 0])
    hi = scipy.linalg.eigh(M, eigvals_only=True, subset_by_index=[n - 1, n - 1])
    return float(lo[0]), float(hi[0])


def lambda_max(M) -> float:
    return eig_extremes(M)[1]


def lambda_max_batch(Ms: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of each matrix in a stack of shape (k, d, d)."""
    Ms = np.asarray(Ms, dtype=float)
    return np.linalg.eigvalsh(0.5 * (Ms + np.swapaxes(Ms, -1, -2)))[..., -1]


def inv_sqrt(M) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix."""
    M = as_sym(M)
    w, V = np.linalg.eigh(M)
    lmin, lmax = w[0], w[-1]
    if not (lmax > 0.0) or lmin <= M.shape[0] * PD_RTOL * lmax:
        raise SingularMatrixError(lmin)
    R = (V / np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def sqrt_sym(M) -> np.ndarray:
    M = as_sym(M)
    w, V = np.linalg.eigh(M)
    R = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (R + R.T)


def sigma_norm(beta, Sigma) -> float | np.ndarray:
    """(beta^T Sigma beta)^(1/2); beta may be a stack of row vectors."""
    beta = np.asarray(beta, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    if beta.shape[-1] != Sigma.shape[0]:
        raise ValueError(f"dimension mismatch: {beta.shape[-1]} vs {Sigma.shape[0]}")
    q = np.einsum("...i,ij,...j->...", beta, Sigma, beta)
    out = np.sqrt(np.maximum(q, 0.0))
    return float(out) if out.ndim == 0 else out
