"""Softmax classifiers trained from scratch with mini-batch SGD + momentum.

Two architectures share one flat parameter vector layout:

* linear (``hidden_dim == 0``): ``W (D x C) | b (C)``
* one hidden tanh layer: ``W1 (D x H) | b1 (H) | W2 (H x C) | b2 (C)``

Parameters are stored as float32 (the wire precision). All arithmetic runs in
float64 and is rounded back to float32 only when a ``ModelParams`` is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import _seeding
from .errors import ConfigError, ContractViolation, TrainingDiverged

PROB_CLIP = 1e-12


class ModelShape(NamedTuple):
    input_dim: int
    hidden_dim: int
    num_classes: int

    @property
    def num_params(self) -> int:
        d, h, c = self
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c


@dataclass(frozen=True, eq=False)
class ModelParams:
    values: np.ndarray
    shape: ModelShape

    def __post_init__(self):
        shape = ModelShape(*self.shape)
        values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)
        if values.size != shape.num_params:
            raise ContractViolation(
                f"{values.size} values given, shape {tuple(shape)} needs {shape.num_params}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    def __len__(self) -> int:
        return self.values.size

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 5
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


def _check_shape(shape) -> ModelShape:
    try:
        shape = ModelShape(*(int(v) for v in shape))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model shape {shape!r}") from exc
    if shape.input_dim < 1 or shape.num_classes < 2 or shape.hidden_dim < 0:
        raise ConfigError(f"invalid model shape {tuple(shape)}")
    return shape


def init_params(shape, seed: int) -> ModelParams:
    """Random weights with std ``1/sqrt(fan_in)``, zero biases."""
    shape = _check_shape(shape)
    gen = _seeding.rng(seed)
    d, h, c = shape
    if h == 0:
        w = gen.standard_normal((d, c)) / math.sqrt(d)
        parts = [w.ravel(), np.zeros(c)]
    else:
        w1 = gen.standard_normal((d, h)) / math.sqrt(d)
        w2 = gen.standard_normal((h, c)) / math.sqrt(h)
        parts = [w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)]
    return ModelParams(np.concatenate(parts), shape)


def _unpack(theta: np.ndarray, shape: ModelShape):
    d, h, c = shape
    if h == 0:
        return theta[: d * c].reshape(d, c), theta[d * c :]
    o = 0
    w1 = theta[o : o + d * h].reshape(d, h)
    o += d * h
    b1 = theta[o : o + h]
    o += h
    w2 = theta[o : o + h * c].reshape(h, c)
    o += h * c
    return w1, b1, w2, theta[o:]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(theta: np.ndarray, shape: ModelShape, x: np.ndarray):
    if shape.hidden_dim == 0:
        w, b = _unpack(theta, shape)
        return _softmax(x @ w + b), None
    w1, b1, w2, b2 = _unpack(theta, shape)
    a = np.tanh(x @ w1 + b1)
    return _softmax(a @ w2 + b2), a


def _as_matrix(features, shape: ModelShape) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != shape.input_dim:
        raise ContractViolation(
            f"features of shape {x.shape} do not match input_dim {shape.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ContractViolation("features must be finite")
    return x


def _as_batch(params: ModelParams, features, labels):
    x = _as_matrix(features, params.shape)
    if x.ndim == 1:
        x = x[None, :]
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    if x.shape[0] == 0:
        raise ContractViolation("batch is empty")
    if y.shape != (x.shape[0],):
        raise ContractViolation(f"{x.shape[0]} feature rows but {y.size} labels")
    if y.min() < 0 or y.max() >= params.shape.num_classes:
        raise ContractViolation("label out of range")
    return x, y


def forward(params: ModelParams, features) -> np.ndarray:
    """Class probabilities for one feature vector (or each row of a matrix)."""
    x = _as_matrix(features, params.shape)
    probs, _ = _forward(params.as_float64(), params.shape, x)
    return probs


def _loss(theta, shape, x, y) -> float:
    probs, _ = _forward(theta, shape, x)
    p = np.clip(probs[np.arange(y.size), y], PROB_CLIP, 1.0)
    return float(-np.mean(np.log(p)))


def _grad_and_loss(theta, shape, x, y):
    n = y.size
    probs, hidden = _forward(theta, shape, x)
    p_true = probs[np.arange(n), y]
    loss = float(-np.mean(np.log(np.clip(p_true, PROB_CLIP, 1.0))))
    # d loss / d logits; rows whose true-class prob sits under the clip floor
    # have a constant loss and therefore zero gradient.
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta[p_true < PROB_CLIP] = 0.0
    delta /= n
    if shape.hidden_dim == 0:
        return np.concatenate([(x.T @ delta).ravel(), delta.sum(axis=0)]), loss
    _, _, w2, _ = _unpack(theta, shape)
    g_w2 = hidden.T @ delta
    g_b2 = delta.sum(axis=0)
    back = (delta @ w2.T) * (1.0 - hidden**2)
    g_w1 = x.T @ back
    g_b1 = back.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2]), loss


def batch_loss(params: ModelParams, features, labels) -> float:
    """Mean cross-entropy ``-log p(label)`` with probabilities clipped at 1e-12."""
    x, y = _as_batch(params, features, labels)
    return _loss(params.as_float64(), params.shape, x, y)


def grad(params: ModelParams, features, labels) -> np.ndarray:
    """Analytic gradient of :func:`batch_loss` (float64, same layout as params)."""
    x, y = _as_batch(params, features, labels)
    g, _ = _grad_and_loss(params.as_float64(), params.shape, x, y)
    return g


def central_difference(func: Callable[[np.ndarray], float], x, h: float) -> np.ndarray:
    if not h > 0:
        raise ContractViolation("finite-difference step h must be positive")
    x = np.array(x, dtype=np.float64, ndmin=1)
    out = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        up = func(x)
        x[i] = orig - h
        down = func(x)
        x[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out


def finite_diff_grad(params: ModelParams, features, labels, h: float = 1e-4) -> np.ndarray:
    x, y = _as_batch(params, features, labels)
    return central_difference(
        lambda theta: _loss(theta, params.shape, x, y), params.as_float64(), h
    )


def _dataset_arrays(data):
    if isinstance(data, tuple):
        x, y = data
    else:
        x, y = data.features, data.labels
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)


def sgd_train(params: ModelParams, dataset, config: TrainConfig) -> ModelParams:
    """Shuffled mini-batch SGD with classical momentum (``v = m*v + g; w -= lr*v``).

    ``dataset`` is a :class:`~fedgen.worldgen.Dataset` or an ``(X, y)`` tuple.
    The shuffle of epoch ``e`` is drawn from a stream keyed on ``(seed, e)``,
    so results are bit-reproducible. Velocity starts at zero on every call.
    """
    if config.epochs == 0:
        return params
    x, y = _dataset_arrays(dataset)
    if y.size == 0:
        raise ContractViolation("cannot train on an empty dataset")
    x, y = _as_batch(params, x, y)
    shape = params.shape
    theta = params.as_float64()
    velocity = np.zeros_like(theta)
    n, bs = y.size, config.batch_size
    lr, mom = config.learning_rate, config.momentum
    for epoch in range(config.epochs):
        order = _seeding.rng(config.seed, "shuffle", epoch).permutation(n)
        for step, start in enumerate(range(0, n, bs)):
            idx = order[start : start + bs]
            g, loss = _grad_and_loss(theta, shape, x[idx], y[idx])
            if not math.isfinite(loss) or not np.all(np.isfinite(g)):
                raise TrainingDiverged(epoch, step, loss)
            velocity *= mom
            velocity += g
            theta -= lr * velocity
    with np.errstate(over="ignore"):
        out = ModelParams(theta, shape)
    if not np.all(np.isfinite(out.values)):
        # finite in float64 but beyond float32 range
        raise TrainingDiverged(config.epochs - 1, step, float("inf"))
    return out


def predict(params: ModelParams, features) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index.
    return np.argmax(forward(params, features), axis=-1)


def evaluate(params: ModelParams, dataset) -> tuple[float, float]:
    """Return ``(accuracy, mean_loss)`` over the whole dataset."""
    x, y = _dataset_arrays(dataset)
    if y.size == 0:
        raise ContractViolation("cannot evaluate on an empty dataset")
    x, y = _as_batch(params, x, y)
    probs, _ = _forward(params.as_float64(), params.shape, x)
    correct = int(np.count_nonzero(np.argmax(probs, axis=1) == y))
    p = np.clip(probs[np.arange(y.size), y], PROB_CLIP, 1.0)
    # math.fsum keeps mean_loss independent of sample order.
    mean_loss = math.fsum(-np.log(p)) / y.size
    return correct / y.size, mean_loss
