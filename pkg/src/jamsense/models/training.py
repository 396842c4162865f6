"""Minibatch gradient training for the CNN, MLP and logistic regression."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DivergenceError, ParameterError, SpecError
from .losses import loss_and_output_grad, softmax
from .networks import CnnSpec, Head, MlpSpec, ModelParams, network_for

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    weight_decay: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ParameterError(f"dtype must be float32 or float64, got {self.dtype!r}")


class Adam:
    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.b1, self.b2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in params.items():
            g = grads[k] + self.wd * p if self.wd else grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= (self.lr / c1) * self.m[k] / (np.sqrt(self.v[k] / c2) + self.eps)


class Sgd:
    def __init__(self, params: dict, lr, weight_decay=0.0):
        self.lr, self.wd = lr, weight_decay

    def step(self, params: dict, grads: dict):
        for k, p in params.items():
            p -= self.lr * (grads[k] + self.wd * p)


def make_optimizer(config: TrainConfig, arrays: dict):
    if config.optimizer == "adam":
        return Adam(arrays, config.learning_rate, weight_decay=config.weight_decay)
    return Sgd(arrays, config.learning_rate, weight_decay=config.weight_decay)


def loss_kind(spec) -> str:
    return "cross_entropy" if spec.head.kind == "classification" else "mse"


def prepare_inputs(params: ModelParams, x):
    x = np.asarray(x, dtype=np.float64)
    if "input_log_eps" in params.meta:
        x = np.log(np.maximum(x, 0) + params.meta["input_log_eps"])
    if "input_mean" in params.meta:
        x = (x - params.meta["input_mean"]) / params.meta["input_std"]
    return x


def prepare_targets(params: ModelParams, y):
    if params.spec.head.kind == "classification":
        return np.asarray(y, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    return (y - params.meta["target_mean"]) / params.meta["target_std"]


def loss_and_grad(params: ModelParams, x, y):
    """Mean batch loss and exact gradients for every parameter array.

    ``x`` and ``y`` are taken as the network sees them: already standardized.
    """
    net = network_for(params.spec)
    out, cache = net.forward(params, x)
    value, dout = loss_and_output_grad(out, y, loss_kind(params.spec))
    return value, net.backward(params, cache, dout.astype(out.dtype))


def backward(params: ModelParams, batch):
    """Gradients of the mean loss over ``batch = (features, targets)``."""
    x, y = batch
    if len(x) == 0:
        raise ParameterError("batch must be non-empty")
    return loss_and_grad(params, prepare_inputs(params, x), prepare_targets(params, y))[1]


LOG_EPS = 1e-4


def fit_preprocessing(spec, features, targets) -> dict:
    meta = {}
    if isinstance(spec, MlpSpec):
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std[std < 1e-12] = 1.0
        meta["input_mean"], meta["input_std"] = mean, std
    elif isinstance(spec, CnnSpec) and spec.input_transform == "log":
        # one scalar pair keeps the spectral shape intact across bins
        lx = np.log(np.maximum(features, 0) + LOG_EPS)
        meta["input_log_eps"] = LOG_EPS
        meta["input_mean"], meta["input_std"] = float(lx.mean()), float(max(lx.std(), 1e-12))
    if targets is not None and spec.head.kind not in ("classification", "embedding"):
        y = np.asarray(targets, dtype=np.float64).reshape(len(targets), -1)
        std = y.std(axis=0)
        std[std < 1e-12] = 1.0
        meta["target_mean"], meta["target_std"] = y.mean(axis=0), std
    return meta


def full_loss(params: ModelParams, x, y, chunk=256) -> float:
    net = network_for(params.spec)
    kind = loss_kind(params.spec)
    total = 0.0
    for i in range(0, len(x), chunk):
        out, _ = net.forward(params, x[i:i + chunk])
        total += loss_and_output_grad(out, y[i:i + chunk], kind)[0] * len(out)
    return total / len(x)


def minibatch_loop(arrays: dict, n: int, config: TrainConfig, batch_loss_and_grad, rng_key=1):
    """Shared epoch/shuffle/optimizer loop. Returns the per-epoch mean loss history."""
    rng = np.random.default_rng([config.seed, rng_key])
    opt = make_optimizer(config, arrays)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads = batch_loss_and_grad(idx)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            opt.step(arrays, grads)
            total += value * len(idx)
        history.append(total / n)
        if not np.isfinite(history[-1]):
            raise DivergenceError(epoch, history[-1])
    return history


def train(features, labels, spec, config: TrainConfig = TrainConfig()) -> ModelParams:
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    if n < 2 * config.batch_size:
        raise ParameterError(f"need at least 2*batch_size={2 * config.batch_size} samples, got {n}")
    if len(labels) != n:
        raise ParameterError("features and labels differ in length")
    dtype = np.dtype(config.dtype)
    net = network_for(spec)
    params = net.init(config.seed, dtype)
    params.meta = fit_preprocessing(spec, features, labels)
    x = prepare_inputs(params, features).astype(dtype)
    y = prepare_targets(params, labels)
    if spec.head.kind != "classification":
        y = y.astype(dtype)
    params.meta["initial_loss"] = full_loss(params, x, y)

    def step(idx):
        return loss_and_grad(params, x[idx], y[idx])

    history = minibatch_loop(params.arrays, n, config, step)
    params.meta["history"] = history
    params.meta["final_loss"] = full_loss(params, x, y)
    log.debug("trained %s: loss %.4f -> %.4f", type(spec).__name__, params.meta["initial_loss"],
              params.meta["final_loss"])
    return params


def predict(params: ModelParams, features, chunk=256):
    """Raw outputs: logits for classification, de-standardized values for regression."""
    x = prepare_inputs(params, features).astype(params.arrays[next(iter(params.arrays))].dtype)
    net = network_for(params.spec)
    out = np.concatenate([net.forward(params, x[i:i + chunk])[0] for i in range(0, len(x), chunk)])
    out = out.astype(np.float64)
    if params.spec.head.kind == "regression":
        out = out * params.meta["target_std"] + params.meta["target_mean"]
    return out


def predict_proba(params: ModelParams, features):
    return softmax(predict(params, features))


def predict_class(params: ModelParams, features):
    return np.argmax(predict(params, features), axis=1)


def logistic_regression_train(features, labels, config: TrainConfig = TrainConfig(), n_classes=None):
    n_classes = n_classes or int(np.max(labels)) + 1
    spec = MlpSpec(hidden=(), head=Head("classification", n_classes), input_length=np.shape(features)[1])
    return train(features, labels, spec, config)


def mlp_train(features, labels, config: TrainConfig = TrainConfig(), hidden=(128, 64), n_classes=None):
    if len(hidden) != 2 or any(h < 1 for h in hidden):
        raise SpecError(f"the MLP has two hidden layers of positive width, got {hidden}")
    n_classes = n_classes or int(np.max(labels)) + 1
    spec = MlpSpec(hidden=tuple(hidden), head=Head("classification", n_classes), input_length=np.shape(features)[1])
    return train(features, labels, spec, config)


def cnn_train(features, labels, config: TrainConfig = TrainConfig(), head: Head | None = None, **spec_kw):
    if head is None:
        head = Head("classification", int(np.max(labels)) + 1)
    spec = CnnSpec(head=head, input_length=np.shape(features)[1], **spec_kw)
    return train(features, labels, spec, config)
