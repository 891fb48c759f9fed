"""PCA + coupling flow + independent latent GPs: likelihood, training, sampling.

The conditional density of a batch of spectra ``Y`` given inputs ``X`` is

    sum_k  log N(z_k ; 0, K_k(X) + noise_k I)        (GP marginal per latent)
  + sum_i  log |d f(w_i) / d w_i|                    (flow Jacobian)
  + B * pca_log_det_correction                       (rectangular change of variables)

with ``w_i = pca_project(y_i)`` and ``z_i = f(w_i)``. Mini-batch training
treats every batch as its own GP data set.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import flow as flowlib
from .errors import InputError, NumericalError, TrainingError
from .gp import GpHyperparams, GpPosterior, fit_hyperparams, lml_and_gradients, log_marginal_likelihood
from .pca import PcaBasis, pca_fit, pca_log_det_correction, pca_project, pca_reconstruct

TRAIN_Z_TOLERANCE = 1e-9


@dataclass
class SnfgpModel:
    pca: PcaBasis
    flow: flowlib.FlowParams
    gps: list
    train_X: np.ndarray
    train_W: np.ndarray
    train_Z: np.ndarray
    metadata: dict = field(default_factory=dict)
    _posteriors: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.train_X = np.asarray(self.train_X, dtype=float)
        if self.train_X.ndim == 1:
            self.train_X = self.train_X[:, None]
        self.train_W = np.asarray(self.train_W, dtype=float)
        self.train_Z = np.asarray(self.train_Z, dtype=float)

    @property
    def K(self) -> int:
        return self.pca.n_components

    @property
    def P(self) -> int:
        return self.pca.n_features

    @property
    def D(self) -> int:
        return self.train_X.shape[1]

    def check_consistency(self):
        """Raise :class:`InputError` (an ``InvariantError`` via the archive) on shape mismatch."""
        K, D, N = self.K, self.D, self.train_X.shape[0]
        problems = []
        if self.flow.dim != K:
            problems.append(("flow", f"dimension {self.flow.dim} != K={K}"))
        if len(self.gps) != K:
            problems.append(("gps", f"{len(self.gps)} GPs for K={K}"))
        for k, gp in enumerate(self.gps):
            if gp.dim != D:
                problems.append((f"gps[{k}].length_scales", f"length {gp.dim} != D={D}"))
        if self.train_W.shape != (N, K):
            problems.append(("train_W", f"shape {self.train_W.shape} != ({N}, {K})"))
        if self.train_Z.shape != (N, K):
            problems.append(("train_Z", f"shape {self.train_Z.shape} != ({N}, {K})"))
        if self.pca.mean.shape != (self.P,) or self.pca.explained_variance.shape != (K,):
            problems.append(("pca", "mean/explained_variance shapes disagree with basis"))
        return problems

    def posteriors(self):
        """Exact GP posteriors on the full cached training set, one per latent."""
        if self._posteriors is None:
            self._posteriors = [GpPosterior(self.train_Z[:, k], self.train_X, gp) for k, gp in enumerate(self.gps)]
        return self._posteriors

    def latent_predictive(self, X_star, include_noise: bool = True):
        """Predictive means and variances, each of shape (Q, K)."""
        X_star = np.asarray(X_star, dtype=float)
        if X_star.ndim == 1:
            X_star = X_star.reshape(-1, self.D)
        cols = [post.predict(X_star, include_noise) for post in self.posteriors()]
        return np.stack([m for m, _ in cols], axis=1), np.stack([v for _, v in cols], axis=1)


@dataclass
class TrainConfig:
    K: int = 15
    batch_size: int = 512
    learning_rate: float = 5e-4
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_layers: int = 6
    hidden: int = 64
    s_max: float = 2.0
    freeze_noise: bool = False
    freeze_gp: bool = False
    freeze_flow: bool = False
    gp_warm_start: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise InputError("batch_size must be at least 2")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if self.epochs < 0:
            raise InputError("epochs must be non-negative")
        if self.K < 1:
            raise InputError("K must be at least 1")


@dataclass
class EpochRecord:
    epoch: int
    train_objective: float
    val_objective: float
    wall_ms: float


@dataclass
class TrainingTrace:
    """Per-epoch objectives, normalized per data point."""

    records: list = field(default_factory=list)

    def train_objectives(self):
        return np.array([r.train_objective for r in self.records])

    def write_csv(self, path, include_timing: bool = True):
        """Write the trace; with ``include_timing=False`` wall_ms is written as 0 so files are reproducible."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_objective", "val_objective", "wall_ms"])
            for r in self.records:
                writer.writerow([r.epoch, format(r.train_objective, ".17g"), format(r.val_objective, ".17g"),
                                 format(r.wall_ms if include_timing else 0.0, ".3f")])


@dataclass(frozen=True)
class LikelihoodTerms:
    gp: float
    flow_log_det: float
    pca_correction: float

    @property
    def total(self) -> float:
        return self.gp + self.flow_log_det + self.pca_correction


def _batch_inputs(Y, X, model):
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if X.ndim == 1:
        X = X.reshape(Y.shape[0], -1)
    if Y.shape[0] != X.shape[0]:
        raise InputError(f"{Y.shape[0]} spectra but {X.shape[0]} inputs")
    if Y.shape[1] != model.P or X.shape[1] != model.D:
        raise InputError(f"expected spectra of length {model.P} and inputs of dimension {model.D}")
    return Y, X


def likelihood_terms(Y, X, model: SnfgpModel) -> LikelihoodTerms:
    """The three additive pieces of the conditional log-likelihood."""
    Y, X = _batch_inputs(Y, X, model)
    W = pca_project(Y, model.pca)
    Z, log_det = flowlib.flow_forward(W, model.flow)
    gp_term = sum(log_marginal_likelihood(Z[:, k], X, gp) for k, gp in enumerate(model.gps))
    return LikelihoodTerms(float(gp_term), float(log_det.sum()), Y.shape[0] * pca_log_det_correction(model.pca))


def conditional_log_likelihood(Y, X, model: SnfgpModel) -> float:
    """Exact log p(Y | X) of a batch, treating the batch as the GP data set."""
    return likelihood_terms(Y, X, model).total


def _objective_and_grads(W, X, flow, gps, correction):
    Z, log_det = flowlib.flow_forward(W, flow)
    value = float(log_det.sum()) + W.shape[0] * correction
    grad_Z = np.empty_like(Z)
    gp_grads = []
    for k, gp in enumerate(gps):
        v, gz, gh = lml_and_gradients(Z[:, k], X, gp)
        value += v
        grad_Z[:, k] = gz
        gp_grads.append(gh)
    _, flow_grads = flowlib.flow_backward(W, flow, (grad_Z, 1.0))
    return value, flow_grads, gp_grads


def conditional_log_likelihood_gradients(Y, X, model: SnfgpModel):
    """Value and gradients of the conditional log-likelihood.

    Returns ``(value, flow_grads, gp_grads)`` where ``flow_grads`` mirrors
    :func:`snfgp.flow.flow_backward` and ``gp_grads[k]`` is the gradient with
    respect to ``model.gps[k].to_log()``.
    """
    Y, X = _batch_inputs(Y, X, model)
    W = pca_project(Y, model.pca)
    return _objective_and_grads(W, X, model.flow, model.gps, pca_log_det_correction(model.pca))


class Adam:
    """Adam ascent on a list of arrays, updated in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def ascend(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p += self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def initial_gp_hyperparams(Z, X) -> list:
    """Scale-aware defaults: empirical variance, half the input range, 10% noise."""
    span = X.max(axis=0) - X.min(axis=0)
    span = np.where(span > 0, span, 1.0)
    out = []
    for k in range(Z.shape[1]):
        var = float(np.var(Z[:, k]))
        var = var if var > 0 else 1.0
        out.append(GpHyperparams(var, span / 2.0, 0.1 * var))
    return out


def _assemble(pca, flow, gps, X, W, metadata):
    Z, _ = flowlib.flow_forward(W, flow)
    return SnfgpModel(pca, flow, list(gps), X.copy(), W.copy(), Z, metadata)


def train(dataset, cfg: TrainConfig, rng_seed=None, progress=None):
    """Fit PCA on the train split, then jointly ascend flow and GP parameters.

    Returns ``(model, trace)``. ``progress``, if given, is called with each
    :class:`EpochRecord`.
    """
    seed = cfg.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)
    tr = dataset.split == "train"
    if not tr.any():
        raise InputError("dataset has no training rows")
    Y, X = dataset.Y[tr], dataset.X[tr]
    N = Y.shape[0]
    if N < 2:
        raise InputError("need at least two training rows")
    va = dataset.split == "val"
    Y_val, X_val = dataset.Y[va], dataset.X[va]

    pca = pca_fit(Y, cfg.K)
    correction = pca_log_det_correction(pca)
    W = pca_project(Y, pca)
    W_val = pca_project(Y_val, pca) if va.any() else None

    flow = flowlib.init_flow(cfg.K, cfg.n_layers, cfg.hidden, cfg.s_max, rng)
    Z0, _ = flowlib.flow_forward(W, flow)
    gps = initial_gp_hyperparams(Z0, X)
    if cfg.gp_warm_start and cfg.epochs > 0:
        gps = [fit_hyperparams(Z0[:, k], X, gp, freeze_noise=cfg.freeze_noise) for k, gp in enumerate(gps)]
    etas = [gp.to_log() for gp in gps]

    flow_arrays = flow.arrays()
    opt_params = ([] if cfg.freeze_flow else list(flow_arrays)) + ([] if cfg.freeze_gp else etas)
    opt = Adam(opt_params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

    def current_gps():
        return [GpHyperparams.from_log(eta) for eta in etas]

    def val_objective():
        if W_val is None:
            return float("nan")
        value, _, _ = _objective_and_grads(W_val, X_val, flow, current_gps(), correction)
        return value / W_val.shape[0]

    trace = TrainingTrace()
    n_batches = max(1, -(-N // cfg.batch_size))
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(N)
        batch_values = []
        for b, idx in enumerate(np.array_split(perm, n_batches)):
            try:
                value, flow_grads, gp_grads = _objective_and_grads(W[idx], X[idx], flow, current_gps(), correction)
            except NumericalError as exc:
                raise TrainingError(f"numerical failure: {exc}", epoch, b, trace) from exc
            if not np.isfinite(value):
                raise TrainingError("non-finite objective", epoch, b, trace)
            grads = []
            if not cfg.freeze_flow:
                grads.extend(flowlib.flatten_grads(flow_grads))
            if not cfg.freeze_gp:
                if cfg.freeze_noise:
                    gp_grads = [np.concatenate([g[:-1], [0.0]]) for g in gp_grads]
                grads.extend(gp_grads)
            if grads:
                opt.ascend(grads)
            batch_values.append(value / idx.size)
        try:
            val = val_objective()
        except NumericalError as exc:
            raise TrainingError(f"validation failure: {exc}", epoch, n_batches, trace) from exc
        record = EpochRecord(epoch, float(np.mean(batch_values)), val, (time.perf_counter() - t0) * 1e3)
        trace.records.append(record)
        if progress is not None:
            progress(record)

    metadata = {
        "seed": int(seed),
        "config": {k: v for k, v in cfg.__dict__.items()},
        "n_train": int(N),
        "final_train_objective": trace.records[-1].train_objective if trace.records else None,
    }
    return _assemble(pca, flow, current_gps(), X, W, metadata), trace


def sample_conditional(x_star, model: SnfgpModel, n_samples: int, rng_seed=None) -> np.ndarray:
    """Draw spectra conditional on a single input ``x_star``; shape (n_samples, P)."""
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    x_star = np.asarray(x_star, dtype=float).reshape(1, -1)
    if x_star.shape[1] != model.D:
        raise InputError(f"x_star has dimension {x_star.shape[1]}, model expects {model.D}")
    mean, var = model.latent_predictive(x_star)
    rng = np.random.default_rng(rng_seed)
    Z = mean + np.sqrt(var) * rng.standard_normal((n_samples, model.K))
    W, _ = flowlib.flow_inverse(Z, model.flow)
    return pca_reconstruct(W, model.pca)
