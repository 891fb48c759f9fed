"""Inverse inference of the input for an observed spectrum.

The profile log-likelihood over a one-dimensional grid of candidate inputs is
the GP predictive density of the spectrum's latent vector. The flow and PCA
Jacobian terms do not depend on the input and are left out, so profile
values are only comparable within one spectrum.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import chi2

from .errors import InferenceError, InputError, NumericalError
from .flow import flow_forward
from .gp import LOG_2PI
from .model import SnfgpModel
from .pca import pca_project

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GridSpec:
    x_min: float = 0.0
    x_max: float = 1.0
    n_points: int = 201

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise InputError("grid x_max must exceed x_min")
        if self.n_points < 50:
            raise InputError("grid needs at least 50 points")

    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)


@dataclass(frozen=True)
class Interval:
    low: float
    high: float
    threshold: float
    clipped: bool
    extra_components: int


@dataclass
class InferenceResult:
    x_mle: np.ndarray
    loglik_max: float
    interval_low: float
    interval_high: float
    deviance_threshold: float
    confidence: float
    clipped: bool
    extra_components: int
    grid_x: np.ndarray
    grid_loglik: np.ndarray

    @property
    def width(self) -> float:
        return self.interval_high - self.interval_low

    @property
    def profile(self):
        return list(zip(self.grid_x.tolist(), self.grid_loglik.tolist()))

    def covers(self, x: float) -> bool:
        return self.interval_low <= x <= self.interval_high

    def to_json(self) -> dict:
        return {
            "x_mle": [float(v) for v in self.x_mle],
            "loglik_max": float(self.loglik_max),
            "interval_low": float(self.interval_low),
            "interval_high": float(self.interval_high),
            "confidence": float(self.confidence),
            "deviance_threshold": float(self.deviance_threshold),
            "clipped": bool(self.clipped),
            "extra_components": int(self.extra_components),
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    def write_profile_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "loglik", "in_interval"])
            for x, ll in zip(self.grid_x, self.grid_loglik):
                inside = int(self.interval_low <= x <= self.interval_high)
                writer.writerow([format(x, ".17g"), format(ll, ".17g"), inside])


def profile_loglik(z_star, xs, model: SnfgpModel) -> np.ndarray:
    """:func:`latent_predictive_loglik` evaluated at many inputs at once."""
    z_star = np.asarray(z_star, dtype=float).reshape(-1)
    if z_star.size != model.K:
        raise InputError(f"z_star has {z_star.size} entries, model has K={model.K}")
    xs = np.asarray(xs, dtype=float)
    X = xs.reshape(-1, model.D)
    mean, var = model.latent_predictive(X)
    r = z_star - mean
    return -0.5 * np.sum(r * r / var + np.log(var) + LOG_2PI, axis=1)


def latent_predictive_loglik(z_star, x, model: SnfgpModel) -> float:
    """Sum over latents of ``log N(z*_k; mean_k(x), var_k(x) + noise_k)``."""
    return float(profile_loglik(z_star, np.asarray(x, dtype=float).reshape(1, -1), model)[0])


def chi2_threshold(confidence: float) -> float:
    if not 0 < confidence < 1:
        raise InputError(f"confidence must lie in (0, 1), got {confidence}")
    return float(chi2.ppf(confidence, df=1))


def _golden_section(f, a, b, n_iter=40):
    """Maximize ``f`` on ``[a, b]``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_iter):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def likelihood_interval(grid_x, grid_loglik, x_mle: float, loglik_max: float, confidence: float = 0.95,
                        loglik_fn=None) -> Interval:
    """Likelihood-ratio interval around the maximum.

    Grid points with deviance ``2 (loglik_max - loglik) <= chi2_1(confidence)``
    form the candidate set; the connected run containing the MLE is reported.
    Its ends are refined by root finding between the bracketing grid points
    using ``loglik_fn`` (linear interpolation of the profile if omitted).
    Runs that reach the grid boundary are clipped there.
    """
    xs = np.asarray(grid_x, dtype=float)
    ll = np.asarray(grid_loglik, dtype=float)
    thr = chi2_threshold(confidence)
    if loglik_fn is None:
        def loglik_fn(x):
            return float(np.interp(x, xs, ll))

    finite = np.isfinite(ll)
    dev = np.where(finite, 2.0 * (loglik_max - ll), np.inf)
    inside = dev <= thr
    i_star = int(np.argmin(np.abs(xs - x_mle)))
    if not inside[i_star]:
        i_star = int(np.argmax(np.where(finite, ll, -np.inf)))

    lo_i = i_star
    while lo_i > 0 and inside[lo_i - 1]:
        lo_i -= 1
    hi_i = i_star
    while hi_i < xs.size - 1 and inside[hi_i + 1]:
        hi_i += 1

    def excess(x):
        return 2.0 * (loglik_max - loglik_fn(x)) - thr

    def root(outer, inner):
        try:
            return float(brentq(excess, outer, inner, xtol=1e-10))
        except ValueError:
            return float(inner)

    clipped = False
    if lo_i == 0:
        low, clipped = float(xs[0]), True
    else:
        low = root(xs[lo_i - 1], min(xs[lo_i], x_mle))
    if hi_i == xs.size - 1:
        high, clipped = float(xs[-1]), True
    else:
        high = root(max(xs[hi_i], x_mle), xs[hi_i + 1])

    # count the other runs of in-threshold grid points
    others = inside.copy()
    others[lo_i:hi_i + 1] = False
    runs = int(others[0]) + int(np.sum(others[1:] & ~others[:-1]))
    return Interval(low, high, thr, clipped, runs)


def spectrum_latent(y_star, model: SnfgpModel) -> np.ndarray:
    z, _ = flow_forward(pca_project(np.asarray(y_star, dtype=float), model.pca), model.flow)
    return z


def infer_mle(y_star, model: SnfgpModel, grid: GridSpec = GridSpec(), confidence: float = 0.95) -> InferenceResult:
    """Grid-search maximum likelihood input for ``y_star`` with a likelihood-ratio interval."""
    if model.D != 1:
        raise InputError("grid inference is implemented for one-dimensional inputs only")
    chi2_threshold(confidence)
    z_star = spectrum_latent(y_star, model)
    xs = grid.points()
    try:
        ll = profile_loglik(z_star, xs, model)
    except NumericalError as exc:
        raise InferenceError(f"likelihood evaluation failed: {exc}") from exc
    if not np.any(np.isfinite(ll)):
        raise InferenceError("likelihood is non-finite at every grid point")

    i = int(np.argmax(np.where(np.isfinite(ll), ll, -np.inf)))  # first maximum: ties go to lower x
    x_best, ll_best = float(xs[i]), float(ll[i])

    def f(x):
        return latent_predictive_loglik(z_star, [x], model)

    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, xs.size - 1)]
    x_ref, ll_ref = _golden_section(f, a, b)
    if ll_ref > ll_best:
        x_best, ll_best = float(x_ref), float(ll_ref)

    iv = likelihood_interval(xs, ll, x_best, ll_best, confidence, f)
    return InferenceResult(np.array([x_best]), ll_best, iv.low, iv.high, iv.threshold, confidence,
                           iv.clipped, iv.extra_components, xs, ll)
