"""Multilayer-perceptron training core.

A fixed MLP family (fully connected, ReLU hidden activations, one dropout
layer between the last hidden layer and the output, log-softmax output)
with manual forward/backward passes in float64. Model parameters live in a
single flat vector so they can be quantized and transmitted blockwise.

Flat parameter layout: for each layer in order (hidden 1, hidden 2, ...,
output), the weight matrix (out_dim x in_dim, row-major) followed by the
bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class Architecture:
    """Shape of the MLP. Defaults: 784 -> 64 -> 30 -> 10 with dropout 0.5."""

    input_dim: int = 784
    hidden_dims: tuple[int, ...] = (64, 30)
    output_dim: int = 10
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden layer sizes must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(self.hidden_dims) + (self.output_dim,)

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD settings: one gradient step per epoch on a fresh mini-batch.

    With full_epoch_mode the whole shard is swept once per epoch instead
    (one step per consecutive batch); kept for ablations.
    """

    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.001
    full_epoch_mode: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


def _unpack(params: np.ndarray, arch: Architecture) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as per-layer (weights, bias) pairs."""
    if params.ndim != 1 or params.size != arch.param_count:
        raise ConfigError(
            f"parameter vector of length {params.size} does not match the "
            f"architecture's {arch.param_count} parameters"
        )
    dims = arch.layer_dims
    layers = []
    offset = 0
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        w = params[offset:offset + n_out * n_in].reshape(n_out, n_in)
        offset += n_out * n_in
        b = params[offset:offset + n_out]
        offset += n_out
        layers.append((w, b))
    return layers


def init_params(arch: Architecture, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    dims = arch.layer_dims
    chunks = []
    for i in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[i])
        chunks.append(rng.uniform(-bound, bound, dims[i + 1] * dims[i]))
        chunks.append(rng.uniform(-bound, bound, dims[i + 1]))
    return np.concatenate(chunks)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_pass(params, arch, inputs, train, rng):
    """Run the network, keeping per-layer activations for backprop.

    Returns (logprobs, activations, dropout_mask). The mask is the inverted
    dropout scaling (zeros and 1/(1-p)), identity outside train mode.
    """
    layers = _unpack(np.asarray(params, dtype=np.float64), arch)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ConfigError(
            f"input of shape {x.shape} does not match input_dim {arch.input_dim}"
        )
    activations = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w.T + b, 0.0)
        activations.append(h)
    mask = None
    if train and arch.dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("train-mode forward with dropout needs an rng")
        keep = 1.0 - arch.dropout_rate
        mask = (rng.random(h.shape) < keep) / keep
        h = h * mask
    w_out, b_out = layers[-1]
    logprobs = _log_softmax(h @ w_out.T + b_out)
    return logprobs, activations, mask


def forward(
    params: np.ndarray,
    arch: Architecture,
    inputs: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Log-probabilities (batch x output_dim). Dropout only in train mode."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    logprobs, _, _ = _forward_pass(params, arch, inputs, mode == "train", rng)
    return logprobs


def nll_loss(logprobs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true labels."""
    labels = np.asarray(labels)
    if labels.shape[0] != logprobs.shape[0]:
        raise InputError(
            f"{labels.shape[0]} labels for {logprobs.shape[0]} prediction rows"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= logprobs.shape[1]):
        raise InputError(f"labels must lie in [0, {logprobs.shape[1]})")
    return float(-logprobs[np.arange(len(labels)), labels].mean())


def loss_and_grad(
    params: np.ndarray,
    arch: Architecture,
    inputs: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator | None = None,
    train: bool = True,
) -> tuple[float, np.ndarray]:
    """Mean NLL over the batch and its gradient w.r.t. the flat params."""
    params = np.asarray(params, dtype=np.float64)
    labels = np.asarray(labels)
    logprobs, activations, mask = _forward_pass(params, arch, inputs, train, rng)
    loss = nll_loss(logprobs, labels)

    layers = _unpack(params, arch)
    batch = inputs.shape[0]
    onehot = np.zeros_like(logprobs)
    onehot[np.arange(batch), labels] = 1.0
    delta = (np.exp(logprobs) - onehot) / batch

    h_last = activations[-1] if mask is None else activations[-1] * mask
    grads = [None] * len(layers)
    w_out, _ = layers[-1]
    grads[-1] = (delta.T @ h_last, delta.sum(axis=0))
    dh = delta @ w_out
    if mask is not None:
        dh = dh * mask
    for i in range(len(layers) - 2, -1, -1):
        dz = dh * (activations[i + 1] > 0.0)
        w, _ = layers[i]
        grads[i] = (dz.T @ activations[i], dz.sum(axis=0))
        if i > 0:
            dh = dz @ w
    flat = np.concatenate([np.concatenate((gw.ravel(), gb)) for gw, gb in grads])
    return loss, flat


def local_train(
    params: np.ndarray,
    arch: Architecture,
    shard,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mini-batch SGD: one gradient step per epoch on one fresh mini-batch.

    Shards smaller than the batch size are sampled with replacement so tiny
    non-IID shards still train.
    """
    images, labels = shard.images, shard.labels
    n = images.shape[0]
    if n == 0:
        raise InputError("cannot train on an empty shard")
    w = np.array(params, dtype=np.float64, copy=True)
    if cfg.full_epoch_mode:
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                _, grad = loss_and_grad(w, arch, images[idx], labels[idx], rng)
                w -= cfg.learning_rate * grad
        return w
    for _ in range(cfg.epochs):
        idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        _, grad = loss_and_grad(w, arch, images[idx], labels[idx], rng)
        w -= cfg.learning_rate * grad
    return w


def compute_update(new: np.ndarray, old: np.ndarray) -> np.ndarray:
    """Local model update: new minus old parameters."""
    new = np.asarray(new, dtype=np.float64)
    old = np.asarray(old, dtype=np.float64)
    if new.shape != old.shape:
        raise ConfigError(f"parameter shapes differ: {new.shape} vs {old.shape}")
    return new - old


def evaluate(params: np.ndarray, arch: Architecture, dataset) -> tuple[float, float]:
    """(mean NLL, accuracy) on a dataset, dropout disabled."""
    if dataset.images.shape[0] == 0:
        raise InputError("cannot evaluate on an empty dataset")
    logprobs = forward(params, arch, dataset.images, mode="eval")
    loss = nll_loss(logprobs, dataset.labels)
    accuracy = float((logprobs.argmax(axis=1) == dataset.labels).mean())
    return loss, accuracy
