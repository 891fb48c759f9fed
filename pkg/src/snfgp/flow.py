"""Affine-coupling normalizing flow with hand-written reverse-mode gradients.

Each coupling layer keeps the coordinates selected by its mask fixed and
transforms the rest as ``v = u * exp(s(u_fixed)) + t(u_fixed)``. The scale
and translation functions are two-hidden-layer tanh networks; the scale
output is squashed to ``s_max * tanh(raw / s_max)`` so each per-layer
log-scale stays inside ``[-s_max, s_max]``.

All functions accept either a single K-vector or a (B, K) batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError

NET_PARAM_NAMES = ("W0", "b0", "W1", "b1", "W2", "b2")


@dataclass
class CouplingLayer:
    """One affine coupling layer.

    ``mask[i]`` is True for coordinates that pass through unchanged and feed
    the networks; the remaining coordinates are scaled and shifted. Network
    weights are stored as ``scale`` and ``translate`` dicts keyed by
    :data:`NET_PARAM_NAMES`; weights have shape (fan_in, fan_out).
    """

    mask: np.ndarray
    scale: dict
    translate: dict
    s_max: float = 2.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.all() or not self.mask.any():
            raise InputError("coupling mask must select some but not all coordinates")

    @property
    def cond_idx(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def active_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @property
    def hidden(self) -> int:
        return self.scale["W0"].shape[1]

    def nets(self):
        return (("scale", self.scale), ("translate", self.translate))


@dataclass
class FlowParams:
    """Ordered stack of coupling layers acting on K-dimensional vectors.

    A flow with ``K == 1`` has no layers (no valid coupling mask exists) and
    is the identity map.
    """

    dim: int
    layers: list = field(default_factory=list)

    def __post_init__(self):
        for layer in self.layers:
            if layer.mask.size != self.dim:
                raise InputError(f"layer mask length {layer.mask.size} != flow dimension {self.dim}")

    def arrays(self):
        """Every parameter array in a fixed order (views, not copies)."""
        out = []
        for layer in self.layers:
            for _, net in layer.nets():
                out.extend(net[name] for name in NET_PARAM_NAMES)
        return out

    def named_arrays(self):
        out = []
        for i, layer in enumerate(self.layers):
            for net_name, net in layer.nets():
                out.extend((f"flow.{i}.{net_name}.{name}", net[name]) for name in NET_PARAM_NAMES)
        return out

    def copy(self) -> "FlowParams":
        layers = [
            CouplingLayer(
                mask=layer.mask.copy(),
                scale={k: v.copy() for k, v in layer.scale.items()},
                translate={k: v.copy() for k, v in layer.translate.items()},
                s_max=layer.s_max,
            )
            for layer in self.layers
        ]
        return FlowParams(self.dim, layers)


def alternating_masks(dim: int, n_layers: int):
    """Even/odd index masks, complementary between consecutive layers."""
    idx = np.arange(dim)
    return [(idx % 2) == (layer % 2) for layer in range(n_layers)]


def _init_net(rng, fan_in, hidden, fan_out):
    def glorot(n_in, n_out):
        return rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))

    return {
        "W0": glorot(fan_in, hidden),
        "b0": np.zeros(hidden),
        "W1": glorot(hidden, hidden),
        "b1": np.zeros(hidden),
        # zero output layer: the layer starts as the identity map
        "W2": np.zeros((hidden, fan_out)),
        "b2": np.zeros(fan_out),
    }


def init_flow(dim: int, n_layers: int = 6, hidden: int = 64, s_max: float = 2.0, rng=None) -> FlowParams:
    """Identity-initialized flow: random hidden layers, zero output layers."""
    if dim < 1:
        raise InputError("flow dimension must be at least 1")
    if n_layers < 0 or hidden < 1 or not s_max > 0:
        raise InputError("n_layers >= 0, hidden >= 1 and s_max > 0 are required")
    rng = np.random.default_rng(rng)
    if dim == 1:
        return FlowParams(1, [])
    layers = []
    for mask in alternating_masks(dim, n_layers):
        n_cond = int(mask.sum())
        n_act = dim - n_cond
        layers.append(
            CouplingLayer(
                mask=mask,
                scale=_init_net(rng, n_cond, hidden, n_act),
                translate=_init_net(rng, n_cond, hidden, n_act),
                s_max=s_max,
            )
        )
    return FlowParams(dim, layers)


def _mlp(x, net):
    a0 = np.tanh(x @ net["W0"] + net["b0"])
    a1 = np.tanh(a0 @ net["W1"] + net["b1"])
    return a1 @ net["W2"] + net["b2"], (x, a0, a1)


def _mlp_backward(g_out, cache, net):
    x, a0, a1 = cache
    grads = {"W2": a1.T @ g_out, "b2": g_out.sum(axis=0)}
    g_pre1 = (g_out @ net["W2"].T) * (1.0 - a1 * a1)
    grads["W1"] = a0.T @ g_pre1
    grads["b1"] = g_pre1.sum(axis=0)
    g_pre0 = (g_pre1 @ net["W1"].T) * (1.0 - a0 * a0)
    grads["W0"] = x.T @ g_pre0
    grads["b0"] = g_pre0.sum(axis=0)
    return g_pre0 @ net["W0"].T, grads


def _scale_shift(layer, u_cond):
    raw, s_cache = _mlp(u_cond, layer.scale)
    s = layer.s_max * np.tanh(raw / layer.s_max)
    t, t_cache = _mlp(u_cond, layer.translate)
    return s, t, s_cache, t_cache


def _as_batch(x, dim, name):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise InputError(f"{name} must have trailing dimension {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x2)):
        raise NumericalError(f"non-finite values in {name}")
    return x2, single


def _check_finite(out, log_det):
    if not (np.all(np.isfinite(out)) and np.all(np.isfinite(log_det))):
        raise NumericalError("flow produced non-finite values")


def _forward_trace(w, params: FlowParams):
    u = w
    log_det = np.zeros(w.shape[0])
    trace = []
    for layer in params.layers:
        ci, ai = layer.cond_idx, layer.active_idx
        s, t, s_cache, t_cache = _scale_shift(layer, u[:, ci])
        es = np.exp(s)
        v = u.copy()
        v[:, ai] = u[:, ai] * es + t
        log_det = log_det + s.sum(axis=1)
        trace.append((u, s, es, s_cache, t_cache))
        u = v
    return u, log_det, trace


def flow_forward(w, params: FlowParams):
    """Map PCA scores to latent values.

    Returns ``(z, log_det)`` where ``log_det`` is the log absolute Jacobian
    determinant of the map at ``w``; a scalar for a single vector, shape (B,)
    for a batch.
    """
    w2, single = _as_batch(w, params.dim, "w")
    z, log_det, _ = _forward_trace(w2, params)
    _check_finite(z, log_det)
    return (z[0], float(log_det[0])) if single else (z, log_det)


def layer_log_dets(w, params: FlowParams) -> np.ndarray:
    """Per-layer log-determinants, shape (n_layers, B)."""
    w2, _ = _as_batch(w, params.dim, "w")
    trace = _forward_trace(w2, params)[2]
    if not trace:
        return np.zeros((0, w2.shape[0]))
    return np.stack([s.sum(axis=1) for _, s, _, _, _ in trace])


def flow_inverse(z, params: FlowParams):
    """Invert the flow. ``log_det`` is that of the inverse map at ``z``."""
    z2, single = _as_batch(z, params.dim, "z")
    v = z2
    log_det = np.zeros(z2.shape[0])
    for layer in reversed(params.layers):
        ci, ai = layer.cond_idx, layer.active_idx
        s, t, _, _ = _scale_shift(layer, v[:, ci])
        u = v.copy()
        u[:, ai] = (v[:, ai] - t) * np.exp(-s)
        log_det = log_det - s.sum(axis=1)
        v = u
    _check_finite(v, log_det)
    return (v[0], float(log_det[0])) if single else (v, log_det)


def flow_backward(w, params: FlowParams, upstream):
    """Reverse-mode gradients through the forward map.

    Parameters
    ----------
    w : array_like, shape (K,) or (B, K)
    params : FlowParams
    upstream : tuple (grad_z, grad_logdet)
        ``grad_z`` matches the shape of ``w``; ``grad_logdet`` is a scalar or
        a (B,) vector of weights on each sample's log-determinant.

    Returns
    -------
    grad_w : ndarray, same shape as ``w``
    grad_params : list of dict
        One ``{"scale": {...}, "translate": {...}}`` per layer, each keyed like
        the layer's networks. These are gradients of
        ``sum(grad_z * z) + sum(grad_logdet * log_det)``.
    """
    w2, single = _as_batch(w, params.dim, "w")
    grad_z, grad_logdet = upstream
    g = np.array(grad_z, dtype=float).reshape(w2.shape)
    g_ld = np.broadcast_to(np.asarray(grad_logdet, dtype=float), (w2.shape[0],))

    _, _, trace = _forward_trace(w2, params)
    grads = [None] * len(params.layers)
    for li in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[li]
        u, s, es, s_cache, t_cache = trace[li]
        ci, ai = layer.cond_idx, layer.active_idx
        g_act = g[:, ai]
        g_s = g_act * u[:, ai] * es + g_ld[:, None]
        g_raw = g_s * (1.0 - (s / layer.s_max) ** 2)
        g_cond_s, s_grads = _mlp_backward(g_raw, s_cache, layer.scale)
        g_cond_t, t_grads = _mlp_backward(g_act, t_cache, layer.translate)
        g_u = np.empty_like(g)
        g_u[:, ai] = g_act * es
        g_u[:, ci] = g[:, ci] + g_cond_s + g_cond_t
        grads[li] = {"scale": s_grads, "translate": t_grads}
        g = g_u
    return (g[0] if single else g), grads


def flatten_grads(grads) -> list:
    """Gradient arrays in the same order as :meth:`FlowParams.arrays`."""
    out = []
    for layer_grads in grads:
        for net_name in ("scale", "translate"):
            out.extend(layer_grads[net_name][name] for name in NET_PARAM_NAMES)
    return out
