"""Feedforward label-posterior encoder with hand-written backpropagation.

Frames are classified independently from a stacked context window (the
frame itself plus ``context_window`` neighbours on each side, edges
replicated).  Hidden layers use tanh or relu with optional inverted
dropout; the output layer is a K-way log-softmax.

The backward pass returns exact gradients of the minimized loss, optionally
including an L2 penalty of ``0.5 * l2 * sum(W**2)`` over the weight
matrices (never the biases).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    output_dim: int
    hidden_layers: tuple[int, ...] = (32, 32)
    activation: str = "tanh"
    context_window: int = 1
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(w < 1 for w in self.hidden_layers):
            raise ValueError("hidden widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.context_window < 0:
            raise ValueError("context_window must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def stacked_dim(self) -> int:
        return self.input_dim * (2 * self.context_window + 1)

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every linear layer, output layer last."""
        dims = [self.stacked_dim, *self.hidden_layers, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def hidden_dim(self) -> int:
        """Width of the representation fed to the transition-model head."""
        return self.hidden_layers[-1] if self.hidden_layers else self.stacked_dim


@dataclass
class EncoderWeights:
    """One (W, b) pair per linear layer; W is (fan_in, fan_out)."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def copy(self) -> "EncoderWeights":
        return EncoderWeights([(W.copy(), b.copy()) for W, b in self.layers])

    def flat(self) -> list[np.ndarray]:
        out = []
        for W, b in self.layers:
            out.extend([W, b])
        return out


@dataclass
class EncoderCache:
    """Forward-pass intermediates needed by the backward pass."""

    weights: EncoderWeights
    inputs: list[np.ndarray]          # input to every linear layer
    activations: list[np.ndarray]     # post-activation (pre-dropout) per hidden layer
    dropout_masks: list[np.ndarray | None]
    log_probs: np.ndarray             # (T, K)
    hidden: np.ndarray                # last hidden representation, (T, hidden_dim)


def init_encoder(config: EncoderConfig, seed: int = 0) -> EncoderWeights:
    """Glorot-uniform weight matrices, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in config.layer_dims:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((W, np.zeros(fan_out)))
    return EncoderWeights(layers)


def zero_encoder(config: EncoderConfig) -> EncoderWeights:
    return EncoderWeights(
        [(np.zeros((fi, fo)), np.zeros(fo)) for fi, fo in config.layer_dims]
    )


def stack_context(features: np.ndarray, context_window: int) -> np.ndarray:
    """Concatenate each frame with its neighbours; edge frames replicate."""
    if context_window == 0:
        return np.asarray(features, dtype=np.float64)
    padded = np.pad(features, ((context_window, context_window), (0, 0)), mode="edge")
    T = features.shape[0]
    cols = [padded[k : k + T] for k in range(2 * context_window + 1)]
    return np.concatenate(cols, axis=1).astype(np.float64)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def encoder_forward(
    config: EncoderConfig,
    weights: EncoderWeights,
    features: np.ndarray,
    train_mode: bool = False,
    seed: int = 0,
) -> tuple[np.ndarray, EncoderCache]:
    """Per-frame K-way log-probabilities plus the cache for backward.

    Dropout masks are drawn from ``seed`` and only in train mode, so
    inference is deterministic and training reproducible.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.input_dim:
        raise ValueError(f"features must be T x {config.input_dim}")
    if not np.isfinite(features).all():
        raise ValueError("features must be finite")
    rng = np.random.default_rng(seed)

    x = stack_context(features, config.context_window)
    inputs, activations, masks = [], [], []
    n_hidden = len(config.hidden_layers)
    for i in range(n_hidden):
        W, b = weights.layers[i]
        inputs.append(x)
        z = x @ W + b
        a = np.tanh(z) if config.activation == "tanh" else np.maximum(z, 0.0)
        activations.append(a)
        if train_mode and config.dropout_rate > 0.0:
            keep = 1.0 - config.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            masks.append(mask)
            x = a * mask
        else:
            masks.append(None)
            x = a
    hidden = x
    W_out, b_out = weights.layers[n_hidden]
    inputs.append(hidden)
    log_probs = _log_softmax(hidden @ W_out + b_out)
    cache = EncoderCache(
        weights=weights,
        inputs=inputs,
        activations=activations,
        dropout_masks=masks,
        log_probs=log_probs,
        hidden=hidden,
    )
    return log_probs, cache


def encoder_backward(
    config: EncoderConfig,
    cache: EncoderCache,
    weights: EncoderWeights,
    d_log_probs: np.ndarray,
    d_hidden_extra: np.ndarray | None = None,
    l2: float = 0.0,
) -> EncoderWeights:
    """Gradients w.r.t. every weight and bias.

    ``d_hidden_extra`` injects an additional gradient on the last hidden
    representation (the transition-model head path).  The L2 term ``l2 * W``
    is added to every weight-matrix gradient.
    """
    if cache.weights is not weights:
        raise ValueError("stale cache: weights changed since the forward pass")
    n_hidden = len(config.hidden_layers)

    # through log-softmax: dL/dz = dL/dy - softmax(z) * sum_k dL/dy_k
    probs = np.exp(cache.log_probs)
    d_z = d_log_probs - probs * d_log_probs.sum(axis=1, keepdims=True)

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * (n_hidden + 1)
    W_out, _ = weights.layers[n_hidden]
    grads[n_hidden] = (cache.inputs[n_hidden].T @ d_z, d_z.sum(axis=0))
    d_x = d_z @ W_out.T
    if d_hidden_extra is not None:
        d_x = d_x + d_hidden_extra

    for i in range(n_hidden - 1, -1, -1):
        mask = cache.dropout_masks[i]
        d_a = d_x if mask is None else d_x * mask
        a = cache.activations[i]
        if config.activation == "tanh":
            d_z = d_a * (1.0 - a * a)
        else:
            d_z = d_a * (a > 0.0)
        W, _ = weights.layers[i]
        grads[i] = (cache.inputs[i].T @ d_z, d_z.sum(axis=0))
        d_x = d_z @ W.T

    if l2 > 0.0:
        grads = [(gW + l2 * W, gb) for (gW, gb), (W, _) in zip(grads, weights.layers)]
    return EncoderWeights(grads)


def l2_penalty(weights: EncoderWeights, l2: float) -> float:
    """The loss term whose gradient is ``l2 * W`` per weight matrix."""
    if l2 <= 0.0:
        return 0.0
    return 0.5 * l2 * sum(float((W * W).sum()) for W, _ in weights.layers)
