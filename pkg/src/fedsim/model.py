"""Small numpy classifiers trained with plain mini-batch SGD.

Parameters live in one flat float64 vector (:class:`ParamVector`) so that the
server can average them coordinate-wise without caring about the layout.
Each layer is stored as an ``(out, in + 1)`` matrix whose last column is the
bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyDatasetError, ShapeError

LOGISTIC = "logistic"
MLP = "mlp"

INIT_SCALE = 0.05
BYTES_PER_VALUE = 8


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    shape: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        values.setflags(write=False)
        shape = tuple((int(r), int(c)) for r, c in self.shape)
        expected = sum(r * c for r, c in shape)
        if values.size != expected:
            raise ShapeError(f"{values.size} values do not fill layer shape {shape} ({expected})")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains NaN or Inf")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None

    @property
    def nbytes(self) -> int:
        """Payload size under the fixed 8-byte-per-value encoding."""
        return len(self) * BYTES_PER_VALUE

    def layers(self, values: Optional[np.ndarray] = None) -> list:
        """Split ``values`` (default: own values) into per-layer matrix views."""
        flat = self.values if values is None else values
        out, offset = [], 0
        for rows, cols in self.shape:
            out.append(flat[offset:offset + rows * cols].reshape(rows, cols))
            offset += rows * cols
        return out


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dims: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind not in (LOGISTIC, MLP):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.kind == LOGISTIC and self.hidden_dims:
            raise ValueError("logistic regression takes no hidden layers")
        if self.kind == MLP and not self.hidden_dims:
            raise ValueError("an MLP needs at least one hidden layer")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden dimensions must be positive")

    @classmethod
    def logistic(cls, input_dim: int, num_classes: int) -> "ModelSpec":
        return cls(LOGISTIC, input_dim, num_classes)

    @classmethod
    def mlp(cls, input_dim: int, hidden_dims: Sequence[int], num_classes: int) -> "ModelSpec":
        return cls(MLP, input_dim, num_classes, tuple(hidden_dims))

    @property
    def layer_shapes(self) -> tuple:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return tuple((dims[i + 1], dims[i] + 1) for i in range(len(dims) - 1))

    @property
    def num_params(self) -> int:
        return sum(r * c for r, c in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_dims": list(self.hidden_dims),
        }


@dataclass(frozen=True)
class TrainConfig:
    """Local training settings. ``batch_size=None`` means full-batch."""

    epochs: int = 1
    batch_size: Optional[int] = None
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or None")
        # lr == 0 is accepted here so a frozen-model run can be expressed
        if not (0.0 <= self.learning_rate <= 1.0):
            raise ValueError("learning_rate must lie in [0, 1]")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    loss: float
    sample_count: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if not math.isfinite(self.loss) or self.loss < 0:
            raise ValueError(f"loss {self.loss} is not a finite non-negative number")

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "loss": self.loss, "sample_count": self.sample_count}


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Shared starting weights: U(-0.05, 0.05) weights, zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for rows, cols in spec.layer_shapes:
        layer = np.zeros((rows, cols))
        layer[:, :-1] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(rows, cols - 1))
        chunks.append(layer.ravel())
    return ParamVector(np.concatenate(chunks), spec.layer_shapes)


def _check(params: ParamVector, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    if params.shape != spec.layer_shapes:
        raise ShapeError(f"params shaped {params.shape}, model expects {spec.layer_shapes}")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"features shaped {x.shape}, model expects (n, {spec.input_dim})")
    return x


def _activations(layers, x):
    """Return the hidden activations (input first) and the output logits."""
    acts = [x]
    for w in layers[:-1]:
        acts.append(np.tanh(acts[-1] @ w[:, :-1].T + w[:, -1]))
    out = layers[-1]
    logits = acts[-1] @ out[:, :-1].T + out[:, -1]
    return acts, logits


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: ParamVector, spec: ModelSpec, features) -> np.ndarray:
    """Class probabilities, one row per input record."""
    x = _check(params, spec, features)
    _, logits = _activations(params.layers(), x)
    return np.exp(_log_softmax(logits))


def loss_and_grad(params: ParamVector, spec: ModelSpec, features, labels, values=None):
    """Mean softmax cross-entropy and its gradient w.r.t. the flat parameters.

    ``values`` lets the training loop pass a scratch buffer laid out like
    ``params`` without building a new :class:`ParamVector` every step.
    """
    x = _check(params, spec, features)
    y = np.asarray(labels, dtype=np.int64)
    layers = params.layers(values)
    acts, logits = _activations(layers, x)
    logp = _log_softmax(logits)
    n = x.shape[0]
    loss = -logp[np.arange(n), y].mean()

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        a = acts[i]
        g = np.empty_like(layers[i])
        g[:, :-1] = delta.T @ a
        g[:, -1] = delta.sum(axis=0)
        grads[i] = g
        if i > 0:
            delta = (delta @ layers[i][:, :-1]) * (1.0 - a * a)
    return float(loss), np.concatenate([g.ravel() for g in grads])


def train(params: ParamVector, spec: ModelSpec, data, cfg: TrainConfig, seed: int):
    """Run ``cfg.epochs`` epochs of SGD on ``data`` starting from ``params``.

    Returns ``(new_params, sample_count)``. Mini-batches come from a seeded
    shuffle per epoch; the last short batch is kept.
    """
    n = len(data)
    if n == 0:
        raise EmptyDatasetError("cannot train on an empty container")
    x = _check(params, spec, data.features)
    y = data.labels
    rng = np.random.default_rng(seed)
    w = params.values.copy()
    lr = cfg.learning_rate

    for _ in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            _, g = loss_and_grad(params, spec, x, y, values=w)
            w -= lr * g
            continue
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, g = loss_and_grad(params, spec, x[idx], y[idx], values=w)
            w -= lr * g
    return ParamVector(w, params.shape), n


def evaluate(params: ParamVector, spec: ModelSpec, data) -> Metrics:
    n = len(data)
    if n == 0:
        raise EmptyDatasetError("cannot evaluate on an empty container")
    x = _check(params, spec, data.features)
    _, logits = _activations(params.layers(), x)
    logp = _log_softmax(logits)
    y = data.labels
    accuracy = float(np.mean(logits.argmax(axis=1) == y))
    loss = float(-logp[np.arange(n), y].mean())
    return Metrics(accuracy=accuracy, loss=loss, sample_count=n)
