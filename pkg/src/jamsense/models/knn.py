"""k-nearest-neighbour classification."""
from __future__ import annotations

import numpy as np

from ..errors import ParameterError

METRICS = ("euclidean", "cosine")


def pairwise_distances(a, b, metric="euclidean"):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if metric == "euclidean":
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
        return np.sqrt(np.maximum(sq, 0))
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1, keepdims=True)
        nb = np.linalg.norm(b, axis=1, keepdims=True)
        na[na == 0] = 1
        nb[nb == 0] = 1
        return 1 - (a / na) @ (b / nb).T
    raise ParameterError(f"unknown metric {metric!r}; choose from {METRICS}")


def knn_predict_batch(train_features, train_labels, queries, k=5, metric="euclidean"):
    """Majority vote over the k nearest training points; count ties go to the smallest class."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    n = len(train_labels)
    if n == 0:
        raise ParameterError("k-NN needs a non-empty training set")
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    dist = pairwise_distances(queries, train_features, metric)
    n_classes = int(train_labels.max()) + 1
    out = np.empty(len(dist), dtype=np.int64)
    for i, row in enumerate(dist):
        # order by distance, then label, so equal-distance ties cannot depend on training order
        nearest = np.lexsort((train_labels, row))[:k]
        out[i] = np.argmax(np.bincount(train_labels[nearest], minlength=n_classes))
    return out


def knn_predict(train_features, train_labels, query, k=5, metric="euclidean") -> int:
    return int(knn_predict_batch(train_features, train_labels, np.atleast_2d(query), k, metric)[0])
