"""Linear dimension reduction by thin SVD, with pseudo-inverse reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError


@dataclass(frozen=True)
class PcaBasis:
    """Centering vector, P x K basis and explained-variance bookkeeping."""

    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray
    total_variance_fraction: float

    @property
    def n_features(self) -> int:
        return self.basis.shape[0]

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]


def pca_fit(Y, K: int) -> PcaBasis:
    """Fit the top-``K`` principal directions of the rows of ``Y``.

    Columns are made sign-deterministic: the largest-magnitude entry of each
    basis vector is positive.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise InputError(f"Y must be a 2-D data matrix, got shape {Y.shape}")
    N, P = Y.shape
    if not isinstance(K, (int, np.integer)) or not 1 <= K <= min(N - 1, P):
        raise InputError(f"K must be in [1, min(N-1, P)] = [1, {min(N - 1, P)}], got {K}")
    if not np.all(np.isfinite(Y)):
        raise NumericalError("non-finite values in Y")

    mean = Y.mean(axis=0)
    Yc = Y - mean
    _, s, Vt = np.linalg.svd(Yc, full_matrices=False)
    tol = max(N, P) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if s[K - 1] <= tol:
        raise NumericalError(f"data has rank below K={K}")

    basis = Vt[:K].T.copy()
    rows = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[rows, np.arange(K)])
    basis *= signs

    explained = s[:K] ** 2 / (N - 1)
    total = (s ** 2).sum() / (N - 1)
    return PcaBasis(mean, basis, explained, float(explained.sum() / total))


def _check_len(x, n, what):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise InputError(f"{what} has trailing dimension {x.shape[-1]}, expected {n}")
    return x


def pca_project(y, b: PcaBasis) -> np.ndarray:
    """Scores ``basis.T @ (y - mean)`` for a P-vector or (B, P) batch."""
    y = _check_len(y, b.n_features, "y")
    return (y - b.mean) @ b.basis


def pca_reconstruct(w, b: PcaBasis) -> np.ndarray:
    """Pseudo-inverse map ``mean + basis @ w`` for a K-vector or (B, K) batch."""
    w = _check_len(w, b.n_components, "w")
    return w @ b.basis.T + b.mean


def pca_log_det_correction(b: PcaBasis) -> float:
    """Log-density correction for the rectangular change of variables.

    ``-0.5 * sum_k log(w_kk)`` with ``w_kk`` the diagonal of ``basis.T @
    basis``. Exactly zero for an orthonormal basis.
    """
    diag = np.einsum("pk,pk->k", b.basis, b.basis)
    if np.any(diag <= 0):
        raise NumericalError("degenerate basis: a column has zero norm")
    return float(-0.5 * np.log(diag).sum())
