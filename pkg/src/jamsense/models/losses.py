"""Losses and their gradients with respect to network outputs."""
from __future__ import annotations

import numpy as np

from ..errors import LabelError, ParameterError


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def mse(prediction, target):
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ParameterError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    return float(np.mean((prediction - target) ** 2))


def _check_labels(labels, n_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"class index out of range [0, {n_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits, labels):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _check_labels(np.atleast_1d(labels), logits.shape[1])
    if len(labels) != len(logits):
        raise ParameterError("one label per row of logits is required")
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def loss(prediction, target, kind: str) -> float:
    if kind == "mse":
        return mse(prediction, target)
    if kind == "cross_entropy":
        return cross_entropy(prediction, target)
    raise ParameterError(f"unknown loss kind {kind!r}")


def loss_and_output_grad(outputs, targets, kind: str):
    """Mean batch loss and its gradient w.r.t. ``outputs`` (same dtype)."""
    n = len(outputs)
    if kind == "mse":
        targets = np.asarray(targets, dtype=outputs.dtype).reshape(outputs.shape)
        diff = outputs - targets
        return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff
    if kind == "cross_entropy":
        labels = _check_labels(targets, outputs.shape[1])
        logp = log_softmax(outputs)
        value = -logp[np.arange(n), labels].astype(np.float64).mean()
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1
        return float(value), grad / n
    raise ParameterError(f"unknown loss kind {kind!r}")
