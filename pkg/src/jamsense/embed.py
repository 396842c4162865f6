"""Self-supervised contrastive embeddings and latent-space analysis.

Pairs are formed from object identity and pose only: two recordings of the
same object in different poses are a positive pair, recordings of different
objects a negative pair. No semantic class labels are used.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cavity_sim import CATEGORIES
from .errors import DivergenceError, PairingError, ParameterError
from .models.knn import knn_predict_batch
from .models.networks import CnnSpec, Head, ModelParams, network_for
from .models.training import Adam, TrainConfig, fit_preprocessing, predict, prepare_inputs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveConfig:
    latent_dim: int = 8
    margin: float = 1.0
    pairs_per_epoch: int = 512
    encoder: CnnSpec | None = None
    normalize_output: bool = False

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ParameterError("latent_dim must be >= 1")
        if self.margin <= 0:
            raise ParameterError("margin must be positive")
        if self.pairs_per_epoch < 2:
            raise ParameterError("pairs_per_epoch must be >= 2")

    def encoder_spec(self, input_length=1025) -> CnnSpec:
        if self.encoder is not None:
            if self.encoder.head.size != self.latent_dim:
                raise ParameterError("encoder head size must equal latent_dim")
            return self.encoder
        return CnnSpec(head=Head("embedding", self.latent_dim), input_length=input_length, input_transform="log")


@dataclass(frozen=True)
class PairLabel:
    index_a: int
    index_b: int
    is_positive: bool

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise PairingError("a pair needs two distinct samples")


def _groups(dataset):
    objects = np.asarray(dataset["object_class"])
    poses = np.asarray(dataset["pose_id"])
    return objects, poses


def sample_pairs(dataset, seed: int, count: int) -> list[PairLabel]:
    """Balanced positive/negative pairs; positives always cross pose boundaries.

    ``dataset`` is anything indexable by "object_class" and "pose_id".
    """
    objects, poses = _groups(dataset)
    if count < 1:
        raise ParameterError("count must be >= 1")
    uniq = np.unique(objects)
    by_object = {}
    for o in uniq:
        idx = np.flatnonzero(objects == o)
        if len(np.unique(poses[idx])) < 2:
            raise PairingError(f"object {o} has a single pose; positive pairs need two")
        by_object[o] = idx
    if len(uniq) < 2:
        raise PairingError("negative pairs need at least two objects")

    rng = np.random.default_rng([seed, 7])
    n_pos = (count + 1) // 2
    pairs = []
    for _ in range(n_pos):
        o = uniq[rng.integers(len(uniq))]
        idx = by_object[o]
        a = idx[rng.integers(len(idx))]
        others = idx[poses[idx] != poses[a]]
        pairs.append(PairLabel(int(a), int(others[rng.integers(len(others))]), True))
    for _ in range(count - n_pos):
        oa, ob = rng.choice(len(uniq), size=2, replace=False)
        ia, ib = by_object[uniq[oa]], by_object[uniq[ob]]
        pairs.append(PairLabel(int(ia[rng.integers(len(ia))]), int(ib[rng.integers(len(ib))]), False))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def contrastive_loss(z_a, z_b, is_positive: bool, margin: float = 1.0) -> float:
    d = float(np.linalg.norm(np.asarray(z_a, dtype=np.float64) - np.asarray(z_b, dtype=np.float64)))
    if is_positive:
        return d * d
    return max(0.0, margin - d) ** 2


def contrastive_loss_and_grad(za, zb, positive, margin=1.0):
    """Mean loss over a batch of pairs and its gradients w.r.t. both sides."""
    diff = za - zb
    d = np.sqrt((diff.astype(np.float64) ** 2).sum(axis=1))
    positive = np.asarray(positive, dtype=bool)
    hinge = np.maximum(0.0, margin - d)
    losses = np.where(positive, d * d, hinge * hinge)
    # d/dza of (m - d)^2 is -2 (m - d) diff / d
    safe_d = np.where(d > 0, d, 1.0)
    coef = np.where(positive, 2.0, np.where(d > 0, -2.0 * hinge / safe_d, 0.0)) / len(d)
    dza = (coef[:, None] * diff).astype(za.dtype)
    return float(losses.mean()), dza, -dza


def embedding_loss_and_grad(params: ModelParams, xa, xb, positive, margin=1.0):
    net = network_for(params.spec)
    b = len(xa)
    out, cache = net.forward(params, np.concatenate([xa, xb]))
    value, dza, dzb = contrastive_loss_and_grad(out[:b], out[b:], positive, margin)
    return value, net.backward(params, cache, np.concatenate([dza, dzb]))


def train_embedding(features, pose_groups, config: ContrastiveConfig = ContrastiveConfig(),
                    train_config: TrainConfig = TrainConfig(epochs=40)) -> ModelParams:
    """Fit a contrastive encoder.

    ``pose_groups`` maps "object_class" and "pose_id" to per-sample arrays
    (a Dataset or its labels dict both work).
    """
    features = np.asarray(features, dtype=np.float64)
    spec = config.encoder_spec(features.shape[1])
    dtype = np.dtype(train_config.dtype)
    params = network_for(spec).init(train_config.seed, dtype)
    params.meta = {**fit_preprocessing(spec, features, None), "margin": config.margin}
    x = prepare_inputs(params, features).astype(dtype)
    opt = Adam(params.arrays, train_config.learning_rate, weight_decay=train_config.weight_decay)
    history = []
    for epoch in range(train_config.epochs):
        pairs = sample_pairs(pose_groups, train_config.seed * 100003 + epoch, config.pairs_per_epoch)
        a = np.array([p.index_a for p in pairs])
        b = np.array([p.index_b for p in pairs])
        pos = np.array([p.is_positive for p in pairs])
        total = 0.0
        for start in range(0, len(pairs), train_config.batch_size):
            sl = slice(start, start + train_config.batch_size)
            value, grads = embedding_loss_and_grad(params, x[a[sl]], x[b[sl]], pos[sl], config.margin)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            opt.step(params.arrays, grads)
            total += value * len(pos[sl])
        history.append(total / len(pairs))
    params.meta["history"] = history
    log.debug("embedding loss %.4f -> %.4f", history[0], history[-1])
    return params


def encode(encoder, features):
    """Apply an encoder; ``None`` is the identity map."""
    if encoder is None:
        return np.asarray(features, dtype=np.float64)
    if callable(encoder):
        return np.asarray(encoder(features), dtype=np.float64)
    return predict(encoder, features)


def mean_pair_distances(z, objects):
    """Mean distance over same-object and different-object sample pairs."""
    z = np.asarray(z, dtype=np.float64)
    objects = np.asarray(objects)
    d = np.sqrt(np.maximum(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1), 0))
    same = objects[:, None] == objects[None, :]
    off = ~np.eye(len(z), dtype=bool)
    return float(d[same & off].mean()), float(d[~same].mean())


def distance_matrix(embeddings, category_assignment, categories=CATEGORIES):
    """Mean pairwise Euclidean distance within and between categories.

    Diagonal entries average over distinct pairs only.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    cats = np.asarray(category_assignment)
    groups = []
    for c in categories:
        g = z[cats == c]
        if len(g) == 0:
            raise ParameterError(f"category {c!r} has no samples")
        groups.append(g)
    k = len(categories)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            d = np.sqrt(((groups[i][:, None, :] - groups[j][None, :, :]) ** 2).sum(-1))
            if i == j:
                n = len(groups[i])
                out[i, i] = d[np.triu_indices(n, 1)].mean() if n > 1 else 0.0
            else:
                out[i, j] = out[j, i] = d.mean()
    return out


def knn_on_embeddings(encoder, train_features, train_labels, val_features, val_labels, k=5,
                      metric="euclidean") -> float:
    z_train = encode(encoder, train_features)
    z_val = encode(encoder, val_features)
    pred = knn_predict_batch(z_train, train_labels, z_val, k, metric)
    return float(np.mean(pred == np.asarray(val_labels)))


def export_embeddings(path, sample_ids, object_class, pose_id, z) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    z = np.asarray(z)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "object_class", "pose_id", *[f"z_{i + 1}" for i in range(z.shape[1])]])
        for sid, oc, pid, row in zip(sample_ids, object_class, pose_id, z):
            w.writerow([int(sid), int(oc), int(pid), *[repr(float(v)) for v in row]])
    return path
