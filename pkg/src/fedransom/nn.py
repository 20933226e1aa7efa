"""The two-class convolutional classifier, written directly on numpy.

Layer stack: one 3x3 stride-1 same-padding convolution with 32 filters,
ReLU, inverted dropout, flatten, a dense projection to two logits, and a
softmax over the two classes. Training is exact backpropagation with
plain mini-batch SGD. Arithmetic is single precision; operations preserve
the dtype of their inputs so the whole path can also run in float64
(which is how the gradients are cross-checked).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, one_hot
from .errors import EmptyDataset, FedransomError, InvalidRate, ShapeMismatch
from .imaging import MIN_SIDE

N_FILTERS = 32
KERNEL_SIDE = 3
N_CLASSES = 2


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.006
    batch_size: int = 64
    epochs: int = 10
    dropout_rate: float = 0.25
    side: int = 300
    seed: int = 0

    def __post_init__(self) -> None:
        # learning_rate 0 is allowed so "training changes nothing" holds
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidRate("dropout_rate must lie in [0, 1)")
        if self.side < MIN_SIDE:
            raise ValueError(f"side must be at least {MIN_SIDE}")


@dataclass(frozen=True)
class ModelParams:
    """All weights of the classifier as named, shaped arrays."""

    conv_kernels: np.ndarray  # (32, 1, 3, 3)
    conv_bias: np.ndarray     # (32,)
    dense_weights: np.ndarray  # (2, 32 * side * side)
    dense_bias: np.ndarray    # (2,)

    @property
    def side(self) -> int:
        width = self.dense_weights.shape[1]
        side = math.isqrt(width // N_FILTERS)
        return side

    def named(self) -> dict[str, np.ndarray]:
        return {
            "conv_kernels": self.conv_kernels,
            "conv_bias": self.conv_bias,
            "dense_weights": self.dense_weights,
            "dense_bias": self.dense_bias,
        }

    def count(self) -> int:
        return sum(int(a.size) for a in self.named().values())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(*(a.astype(dtype) for a in self.named().values()))


def validate_params(params: ModelParams) -> ModelParams:
    k, b, w, d = params.conv_kernels, params.conv_bias, params.dense_weights, params.dense_bias
    if k.shape != (N_FILTERS, 1, KERNEL_SIDE, KERNEL_SIDE) or b.shape != (N_FILTERS,):
        raise ShapeMismatch(f"bad conv shapes {k.shape}, {b.shape}")
    if w.ndim != 2 or w.shape[0] != N_CLASSES or d.shape != (N_CLASSES,):
        raise ShapeMismatch(f"bad dense shapes {w.shape}, {d.shape}")
    side = math.isqrt(w.shape[1] // N_FILTERS)
    if N_FILTERS * side * side != w.shape[1] or side < MIN_SIDE:
        raise ShapeMismatch(f"dense width {w.shape[1]} is not 32 * side**2 with side >= {MIN_SIDE}")
    for name, arr in params.named().items():
        if not np.isfinite(arr).all():
            raise ShapeMismatch(f"non-finite values in {name}")
    return params


def init_params(side: int, seed: int, dtype=np.float32) -> ModelParams:
    """Seeded uniform init; scales keep the initial logits close to zero."""
    rng = np.random.default_rng(seed)
    conv_bound = math.sqrt(6.0 / (KERNEL_SIDE * KERNEL_SIDE))  # fan_in = 9
    width = N_FILTERS * side * side
    dense_bound = math.sqrt(6.0 / (width + N_CLASSES))
    return validate_params(ModelParams(
        conv_kernels=rng.uniform(-conv_bound, conv_bound,
                                 (N_FILTERS, 1, KERNEL_SIDE, KERNEL_SIDE)).astype(dtype),
        conv_bias=np.zeros(N_FILTERS, dtype=dtype),
        dense_weights=rng.uniform(-dense_bound, dense_bound,
                                  (N_CLASSES, width)).astype(dtype),
        dense_bias=np.zeros(N_CLASSES, dtype=dtype),
    ))


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0)


def softmax_output(h: np.ndarray) -> np.ndarray:
    """Normalized exponentials along the last axis, max-shifted for stability."""
    shifted = h - h.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def conv2d_same(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 cross-correlation with a one-pixel zero border.

    Accepts a single (c, h, w) image or an (n, c, h, w) batch; the output
    keeps the spatial size of the input.
    """
    single = x.ndim == 3
    batch = x[None] if single else x
    if batch.ndim != 4:
        raise ShapeMismatch(f"expected 3-d or 4-d input, got {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2:] != (KERNEL_SIDE, KERNEL_SIDE):
        raise ShapeMismatch(f"expected (f, c, 3, 3) kernels, got {kernels.shape}")
    n, c, h, w = batch.shape
    n_filters = kernels.shape[0]
    if kernels.shape[1] != c:
        raise ShapeMismatch(f"kernel channels {kernels.shape[1]} != input channels {c}")
    if bias.shape != (n_filters,):
        raise ShapeMismatch(f"expected ({n_filters},) bias, got {bias.shape}")
    if h < KERNEL_SIDE or w < KERNEL_SIDE:
        raise ShapeMismatch(f"spatial size {h}x{w} below kernel size")

    padded = np.pad(batch, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.empty((n, n_filters, h, w), dtype=batch.dtype)
    out[:] = bias.reshape(1, n_filters, 1, 1)
    for i in range(KERNEL_SIDE):
        for j in range(KERNEL_SIDE):
            patch = padded[:, :, i : i + h, j : j + w]
            if c == 1:
                out += patch * kernels[:, 0, i, j].reshape(1, n_filters, 1, 1)
            else:
                out += np.einsum("nchw,fc->nfhw", patch, kernels[:, :, i, j], optimize=True)
    return out[0] if single else out


def dropout(x: np.ndarray, rate: float, rng: Optional[np.random.Generator],
            training: bool) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: zero with probability *rate*, scale survivors.

    Returns (output, mask); output = x * mask. In eval mode, or at rate 0,
    the mask is all ones and the input passes through unchanged.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("training-mode dropout needs a generator")
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


@dataclass(frozen=True)
class ForwardTrace:
    """Every intermediate the backward pass needs."""

    batch: np.ndarray        # (n, 1, side, side)
    conv_pre: np.ndarray     # pre-activation conv output
    dropout_mask: np.ndarray
    flat: np.ndarray         # post-dropout activations, flattened per sample
    logits: np.ndarray       # (n, 2)
    probs: np.ndarray        # (n, 2), rows sum to 1


def forward(params: ModelParams, batch: np.ndarray, config: TrainConfig,
            rng: Optional[np.random.Generator] = None,
            training: bool = False) -> ForwardTrace:
    """Run the full stack: conv, ReLU, dropout, flatten, dense, softmax."""
    if batch.ndim != 4 or batch.shape[1] != 1:
        raise ShapeMismatch(f"expected (n, 1, side, side) batch, got {batch.shape}")
    n = batch.shape[0]
    width = N_FILTERS * batch.shape[2] * batch.shape[3]
    if params.dense_weights.shape[1] != width:
        raise ShapeMismatch(
            f"batch side {batch.shape[2]} does not match dense width "
            f"{params.dense_weights.shape[1]}")
    conv_pre = conv2d_same(batch, params.conv_kernels, params.conv_bias)
    act = relu(conv_pre)
    dropped, mask = dropout(act, config.dropout_rate, rng, training)
    flat = dropped.reshape(n, width)
    logits = flat @ params.dense_weights.T + params.dense_bias
    probs = softmax_output(logits)
    return ForwardTrace(batch, conv_pre, mask, flat, logits, probs)


def loss_and_grad(trace: ForwardTrace, labels: np.ndarray,
                  params: ModelParams) -> tuple[float, ModelParams]:
    """Mean cross-entropy and its exact gradients.

    *labels* is one-hot, shape (n, 2). The loss is computed from the
    logits via log-sum-exp so confident mistakes stay finite. Gradients
    flow through the dense layer, the stored dropout mask, the ReLU gate,
    and the convolution; the returned object has parameter shapes.
    """
    n = trace.batch.shape[0]
    if labels.shape != trace.probs.shape:
        raise ShapeMismatch(f"expected {trace.probs.shape} one-hot labels, got {labels.shape}")

    shifted = trace.logits - trace.logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float((log_norm - (labels * shifted).sum(axis=1)).mean())

    d_logits = (trace.probs - labels) / trace.probs.dtype.type(n)
    d_dense_w = d_logits.T @ trace.flat
    d_dense_b = d_logits.sum(axis=0)

    d_flat = d_logits @ params.dense_weights
    d_dropped = d_flat.reshape(trace.conv_pre.shape) * trace.dropout_mask
    d_pre = d_dropped * (trace.conv_pre > 0)

    d_conv_b = d_pre.sum(axis=(0, 2, 3))
    h, w = trace.batch.shape[2:]
    padded = np.pad(trace.batch, ((0, 0), (0, 0), (1, 1), (1, 1)))
    d_kernels = np.empty_like(params.conv_kernels)
    for i in range(KERNEL_SIDE):
        for j in range(KERNEL_SIDE):
            patch = padded[:, :, i : i + h, j : j + w]
            d_kernels[:, :, i, j] = np.einsum("nfhw,nchw->fc", d_pre, patch, optimize=True)
    return loss, ModelParams(d_kernels, d_conv_b, d_dense_w, d_dense_b)


def sgd_step(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    """p <- p - lr * g, elementwise."""
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    new = {}
    for name, p in params.named().items():
        g = grads.named()[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        new[name] = p - learning_rate * g
    return ModelParams(**new)


def predict(params: ModelParams, batch: np.ndarray, threshold: float = 0.5,
            chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode class labels and probabilities.

    A sample is called ransomware (1) when its class-1 probability strictly
    exceeds *threshold*; at the default 0.5 this is argmax with the exact
    tie resolved to class 0.
    """
    cfg = TrainConfig(side=params.side)
    probs = np.empty((batch.shape[0], N_CLASSES), dtype=np.float32)
    for start in range(0, batch.shape[0], chunk):
        part = batch[start : start + chunk]
        probs[start : start + len(part)] = forward(params, part, cfg, training=False).probs
    labels = (probs[:, 1] > threshold).astype(np.int64)
    return labels, probs


def accuracy(params: ModelParams, dataset: Dataset) -> float:
    labels, _ = predict(params, dataset.images)
    return float((labels == dataset.labels).mean())


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: Optional[float] = None


def fit(params: ModelParams, train: Dataset, config: TrainConfig,
        rng: np.random.Generator,
        val: Optional[Dataset] = None) -> tuple[ModelParams, list[EpochStats]]:
    """Mini-batch SGD over shuffled epochs; the short final batch is kept.

    Deterministic for a given generator state: the same seed replays the
    same shuffles, dropout masks, and parameter trajectory bit for bit.
    """
    if len(train) == 0:
        raise EmptyDataset("cannot fit on an empty dataset")
    if train.side != config.side:
        raise ShapeMismatch(f"dataset side {train.side} != config side {config.side}")
    labels = one_hot(train.labels).astype(params.dense_bias.dtype)
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), config.batch_size):
            idx = order[start : start + config.batch_size]
            trace = forward(params, train.images[idx], config, rng, training=True)
            loss, grads = loss_and_grad(trace, labels[idx], params)
            if not math.isfinite(loss):
                raise FedransomError(f"loss diverged to {loss} in epoch {epoch}")
            params = sgd_step(params, grads, config.learning_rate)
            losses.append(loss)
        history.append(EpochStats(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            train_accuracy=accuracy(params, train),
            val_accuracy=accuracy(params, val) if val is not None and len(val) else None,
        ))
    return params, history
