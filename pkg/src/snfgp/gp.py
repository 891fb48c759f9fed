"""Exact single-output Gaussian process regression.

Zero prior mean, ARD squared-exponential covariance and homoscedastic
Gaussian noise. Hyperparameters are optimized in log space; the gradient
vector returned by :func:`log_marginal_gradients` is ordered as
``[log signal_variance, log length_scale_1, ..., log length_scale_D,
log noise_variance]``, the same layout as :meth:`GpHyperparams.to_log`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import InputError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))

# Diagonal jitter, relative to the signal variance.
JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True)
class GpHyperparams:
    """ARD squared-exponential hyperparameters for one latent dimension."""

    signal_variance: float
    length_scales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        if ls.ndim != 1 or ls.size == 0:
            raise InputError("length_scales must be a non-empty vector")
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not self.signal_variance > 0 or not np.isfinite(self.signal_variance):
            raise InputError(f"signal_variance must be positive, got {self.signal_variance}")
        if not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise InputError(f"length_scales must be positive, got {ls}")
        if not self.noise_variance >= 0 or not np.isfinite(self.noise_variance):
            raise InputError(f"noise_variance must be non-negative, got {self.noise_variance}")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    def to_log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.concatenate(
                [[np.log(self.signal_variance)], np.log(self.length_scales), [np.log(self.noise_variance)]]
            )

    @classmethod
    def from_log(cls, eta) -> "GpHyperparams":
        eta = np.asarray(eta, dtype=float)
        return cls(float(np.exp(eta[0])), np.exp(eta[1:-1]), float(np.exp(eta[-1])))

    def replace(self, **changes) -> "GpHyperparams":
        fields = {
            "signal_variance": self.signal_variance,
            "length_scales": self.length_scales,
            "noise_variance": self.noise_variance,
        }
        fields.update(changes)
        return GpHyperparams(**fields)


@dataclass(frozen=True)
class GpPredictive:
    mean: float
    variance: float


def _as_inputs(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"{name} must be a 2-D input matrix, got shape {X.shape}")
    return X


def _scaled_sqdist(X1, X2, length_scales):
    """Per-dimension squared distances scaled by the length-scales, shape (N1, N2, D)."""
    diff = (X1[:, None, :] - X2[None, :, :]) / length_scales
    return diff * diff


def kernel_matrix(X1, X2, hyper: GpHyperparams) -> np.ndarray:
    """ARD squared-exponential covariance between two input sets.

    Parameters
    ----------
    X1, X2 : array_like, shapes (N1, D) and (N2, D)
    hyper : GpHyperparams

    Returns
    -------
    ndarray, shape (N1, N2)
        ``signal_variance * exp(-0.5 * sum_d (x1_d - x2_d)**2 / l_d**2)``
    """
    X1 = _as_inputs(X1, "X1")
    X2 = _as_inputs(X2, "X2")
    D = hyper.dim
    if X1.shape[1] != D or X2.shape[1] != D:
        raise InputError(
            f"input dimension mismatch: X1 has {X1.shape[1]} columns, X2 has "
            f"{X2.shape[1]}, length_scales has {D}"
        )
    r2 = _scaled_sqdist(X1, X2, hyper.length_scales).sum(axis=-1)
    return hyper.signal_variance * np.exp(-0.5 * r2)


def _check_targets(z, X, hyper):
    X = _as_inputs(X, "X")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size == 0:
        raise InputError("need at least one training point")
    if X.shape[0] != z.size:
        raise InputError(f"z has {z.size} entries but X has {X.shape[0]} rows")
    if X.shape[1] != hyper.dim:
        raise InputError(f"X has {X.shape[1]} columns but length_scales has {hyper.dim}")
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite training targets")
    return z, X


def _cholesky_with_jitter(K, signal_variance):
    """Lower Cholesky factor of ``K + jitter*I`` with escalating jitter.

    Returns the factor and the jitter that was used.
    """
    n = K.shape[0]
    jitter = JITTER_START * signal_variance
    limit = JITTER_MAX * signal_variance * (1 + 1e-12)
    eye = np.eye(n)
    while True:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            if jitter * 10 > limit:
                raise NumericalError(
                    f"covariance not positive definite after jitter {jitter:.3g}"
                ) from None
            jitter *= 10


def _factor(z, X, hyper):
    Kf = kernel_matrix(X, X, hyper)
    K = Kf + hyper.noise_variance * np.eye(X.shape[0])
    if not np.all(np.isfinite(K)):
        raise NumericalError("non-finite covariance matrix")
    L, jitter = _cholesky_with_jitter(K, hyper.signal_variance)
    alpha = cho_solve((L, True), z)
    return Kf, L, jitter, alpha


def _lml_from_factor(z, L, alpha):
    return float(-0.5 * z @ alpha - np.log(np.diag(L)).sum() - 0.5 * z.size * LOG_2PI)


def log_marginal_likelihood(z, X, hyper: GpHyperparams) -> float:
    """Log marginal likelihood of targets ``z`` at inputs ``X``."""
    z, X = _check_targets(z, X, hyper)
    _, L, _, alpha = _factor(z, X, hyper)
    return _lml_from_factor(z, L, alpha)


def lml_and_gradients(z, X, hyper: GpHyperparams):
    """Log marginal likelihood with its gradients.

    Returns
    -------
    value : float
    grad_z : ndarray, shape (N,)
    grad_log_hyper : ndarray, shape (D + 2,)
        Gradient with respect to the log-hyperparameters.
    """
    z, X = _check_targets(z, X, hyper)
    Kf, L, jitter, alpha = _factor(z, X, hyper)
    value = _lml_from_factor(z, L, alpha)

    n = z.size
    K_inv = cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - K_inv

    grad = np.empty(hyper.dim + 2)
    # jitter scales with the signal variance, so it belongs to that derivative
    grad[0] = 0.5 * (np.sum(A * Kf) + jitter * np.trace(A))
    r2 = _scaled_sqdist(X, X, hyper.length_scales)
    for d in range(hyper.dim):
        grad[1 + d] = 0.5 * np.sum(A * Kf * r2[:, :, d])
    grad[-1] = 0.5 * hyper.noise_variance * np.trace(A)
    return value, -alpha, grad


def log_marginal_gradients(z, X, hyper: GpHyperparams):
    """Gradients of the log marginal likelihood.

    ``grad_z = -(K + noise I)^-1 z`` and each log-hyperparameter gradient is
    ``0.5 * tr[(alpha alpha^T - K^-1) dK/d eta]``.
    """
    _, grad_z, grad_hyper = lml_and_gradients(z, X, hyper)
    return grad_z, grad_hyper


class GpPosterior:
    """Factorized training covariance, reused across many predictions."""

    def __init__(self, z, X, hyper: GpHyperparams):
        z, X = _check_targets(z, X, hyper)
        self.X = X
        self.hyper = hyper
        _, self.L, self.jitter, self.alpha = _factor(z, X, hyper)

    def predict(self, X_star, include_noise: bool = True):
        """Predictive means and variances at each row of ``X_star``."""
        X_star = _as_inputs(X_star, "X_star")
        k_star = kernel_matrix(X_star, self.X, self.hyper)
        mean = k_star @ self.alpha
        v = solve_triangular(self.L, k_star.T, lower=True)
        var = self.hyper.signal_variance - np.einsum("ij,ij->j", v, v)
        var = np.maximum(var, 0.0)
        if include_noise:
            var = var + self.hyper.noise_variance
        return mean, var


def predict(x_star, z, X, hyper: GpHyperparams, include_noise: bool = True) -> GpPredictive:
    """Predictive distribution of the latent value at a single input ``x_star``."""
    x_star = np.asarray(x_star, dtype=float).reshape(1, -1)
    mean, var = GpPosterior(z, X, hyper).predict(x_star, include_noise=include_noise)
    return GpPredictive(float(mean[0]), float(var[0]))


def fit_hyperparams(z, X, init: GpHyperparams, freeze_noise: bool = False, max_iter: int = 200) -> GpHyperparams:
    """Type-II maximum likelihood by L-BFGS in log space, starting from ``init``.

    Used to warm-start the GP hyperparameters before joint training.
    """
    z, X = _check_targets(z, X, init)
    eta0 = init.to_log()
    free = np.ones(eta0.size, dtype=bool)
    if freeze_noise or init.noise_variance == 0:
        free[-1] = False

    def objective(theta):
        eta = eta0.copy()
        eta[free] = theta
        try:
            value, _, grad = lml_and_gradients(z, X, GpHyperparams.from_log(eta))
        except (NumericalError, InputError):
            return np.inf, np.zeros_like(theta)
        return -value, -grad[free]

    # keep the search inside a sane window around the start
    bounds = [(t - 12.0, t + 12.0) for t in eta0[free]]
    res = minimize(objective, eta0[free], jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iter})
    eta = eta0.copy()
    eta[free] = res.x
    if not np.isfinite(res.fun) or res.fun > objective(eta0[free])[0]:
        return init
    return GpHyperparams.from_log(eta)
