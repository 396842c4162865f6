"""Cross-validation, metrics, experiment sweeps and the sorting decision rule."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, LabelError, ParameterError
from .features import FeatureConfig, extract_features
from .models.knn import knn_predict_batch
from .models.losses import softmax
from .models.networks import CnnSpec, Head, MlpSpec
from .models.training import TrainConfig, predict, train

log = logging.getLogger(__name__)

GROUPINGS = ("by_pose", "by_sample")
TASKS = ("classify", "regress-size", "regress-theta")
MODELS = ("cnn", "mlp", "lr", "knn")
ABSTAIN = None


@dataclass
class FoldPlan:
    n_folds: int
    grouping: str
    train: list
    val: list
    seed: int = 0

    def __iter__(self):
        return iter(zip(self.train, self.val))

    def to_dict(self):
        return {"n_folds": self.n_folds, "grouping": self.grouping, "seed": self.seed,
                "train": [t.tolist() for t in self.train], "val": [v.tolist() for v in self.val]}


def make_folds(dataset, n_folds: int = 5, grouping: str = "by_pose", seed: int = 0, indices=None) -> FoldPlan:
    """Partition ``indices`` (default: every sample) into grouped CV folds.

    With ``by_pose`` every recording sharing a pose id lands on the same side.
    """
    if grouping not in GROUPINGS:
        raise ConfigError(f"unknown grouping {grouping!r}; choose from {GROUPINGS}")
    if n_folds < 2:
        raise ConfigError("need at least 2 folds")
    n = len(dataset["pose_id"])
    indices = np.arange(n) if indices is None else np.asarray(indices)
    keys = np.asarray(dataset["pose_id"])[indices] if grouping == "by_pose" else indices
    groups = np.unique(keys)
    if len(groups) < n_folds:
        raise ConfigError(f"{len(groups)} groups cannot fill {n_folds} folds")
    shuffled = np.random.default_rng([seed, 11]).permutation(groups)
    train_sets, val_sets = [], []
    for chunk in np.array_split(shuffled, n_folds):
        in_val = np.isin(keys, chunk)
        val_sets.append(np.sort(indices[in_val]))
        train_sets.append(np.sort(indices[~in_val]))
    return FoldPlan(n_folds, grouping, train_sets, val_sets, seed)


# ---------------------------------------------------------------------------
# metrics

def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.size == 0 or p.shape != t.shape:
        raise ParameterError("rmse needs equal-length, non-empty inputs")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def angular_error(pred_deg, true_deg, period=180.0):
    """Signed wrap-around difference in (-period/2, period/2]."""
    d = (np.asarray(pred_deg) - np.asarray(true_deg)) % period
    return np.where(d > period / 2, d - period, d)


def confusion_and_accuracy(predictions, labels, n_classes: int):
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    for arr in (predictions, labels):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelError(f"class index out of range [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    return confusion, accuracy


@dataclass
class Metrics:
    per_fold: list
    mean: float = 0.0
    variance: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.per_fold, dtype=np.float64)
        self.mean = float(vals.mean()) if vals.size else float("nan")
        # population variance over folds
        self.variance = float(vals.var()) if vals.size else float("nan")

    def to_dict(self):
        return {"per_fold": [float(v) for v in self.per_fold], "mean": self.mean, "variance": self.variance}


def sorting_decision(probabilities, threshold: float = 0.6):
    """Top class if its probability reaches ``threshold``, else ABSTAIN (None)."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 1 or p.size < 2 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ParameterError("probabilities must be a finite non-negative vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ParameterError(f"probabilities sum to {p.sum()}, not 1")
    if not 0 <= threshold <= 1:
        raise ParameterError("threshold must lie in [0, 1]")
    best = int(np.argmax(p))
    return best if p[best] >= threshold else ABSTAIN


def sorting_summary(probabilities, labels, threshold: float = 0.6) -> dict:
    """Apply the decision rule row by row; abstentions are counted, not scored."""
    decisions = [sorting_decision(p, threshold) for p in np.asarray(probabilities)]
    labels = np.asarray(labels)
    decided = [i for i, d in enumerate(decisions) if d is not ABSTAIN]
    correct = sum(decisions[i] == labels[i] for i in decided)
    return {"threshold": threshold, "decided": len(decided), "abstained": len(decisions) - len(decided),
            "accuracy_on_decided": float(correct / len(decided)) if decided else float("nan")}


# ---------------------------------------------------------------------------
# experiment running

@dataclass(frozen=True)
class ModelConfig:
    """Model choice plus training hyperparameters for one experiment."""
    model: str = "cnn"
    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 5
    metric: str = "euclidean"
    mlp_hidden: tuple = (128, 64)
    cnn_layers: tuple = ((16, 7, 2), (32, 7, 2), (64, 7, 2))
    cnn_pooling: str = "flatten"
    # None: log-compressed input for classification, linear for regression (log amplifies the noise floor)
    cnn_input: str | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; valid models: {', '.join(MODELS)}")

    def to_dict(self):
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    def config_hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def task_targets(dataset, task: str):
    if task == "classify":
        return np.asarray(dataset["object_class"], dtype=np.int64)
    if task == "regress-size":
        return np.asarray(dataset["size_mm"], dtype=np.float64)
    if task == "regress-theta":
        # doubled-angle encoding keeps the 180 deg periodicity continuous
        th = np.deg2rad(2 * np.asarray(dataset["theta_deg"], dtype=np.float64))
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    raise ConfigError(f"unknown task {task!r}; choose from {TASKS}")


def decode_theta(outputs):
    return (np.rad2deg(np.arctan2(outputs[:, 1], outputs[:, 0])) / 2) % 180.0


def build_spec(config: ModelConfig, task: str, n_classes: int, input_length: int):
    if task == "classify":
        head = Head("classification", n_classes)
    else:
        head = Head("regression", 1 if task == "regress-size" else 2)
    if config.model == "cnn":
        return CnnSpec(config.cnn_layers, head, pooling=config.cnn_pooling, input_length=input_length,
                       input_transform=config.cnn_input or ("log" if task == "classify" else "scale"))
    if config.model == "mlp":
        return MlpSpec(config.mlp_hidden, head, input_length)
    if config.model == "lr":
        return MlpSpec((), head, input_length)
    raise ConfigError(f"model {config.model!r} has no trainable spec")


class Predictor:
    """Uniform predict interface over trained networks and k-NN."""

    def __init__(self, config: ModelConfig, task: str, params=None, train_x=None, train_y=None):
        self.config, self.task, self.params = config, task, params
        self.train_x, self.train_y = train_x, train_y

    def outputs(self, x):
        return predict(self.params, x)

    def predict(self, x):
        if self.config.model == "knn":
            return knn_predict_batch(self.train_x, self.train_y, x, self.config.k, self.config.metric)
        out = self.outputs(x)
        if self.task == "classify":
            return np.argmax(out, axis=1)
        if self.task == "regress-theta":
            return decode_theta(out)
        return out[:, 0]

    def proba(self, x):
        return softmax(self.outputs(x))


def fit_predictor(config: ModelConfig, task: str, x, y, n_classes: int) -> Predictor:
    if config.model == "knn":
        if task != "classify":
            raise ConfigError("k-NN is only available for classification")
        return Predictor(config, task, train_x=np.asarray(x), train_y=np.asarray(y))
    train_cfg = config.train
    if len(x) < 2 * train_cfg.batch_size:
        train_cfg = replace(train_cfg, batch_size=max(1, len(x) // 2))
    spec = build_spec(config, task, n_classes, np.shape(x)[1])
    return Predictor(config, task, params=train(x, y, spec, train_cfg))


def score(task, predictor: Predictor, x, dataset_rows, n_classes):
    """Metric dict for one evaluation set: rmse/error for regression, accuracy and confusion otherwise."""
    pred = predictor.predict(x)
    if task == "classify":
        conf, acc = confusion_and_accuracy(pred, dataset_rows["object_class"], n_classes)
        out = {"accuracy": acc, "confusion": conf}
        if predictor.params is not None:
            out["sorting"] = sorting_summary(predictor.proba(x), dataset_rows["object_class"])
        return out
    if task == "regress-size":
        return {"rmse": rmse(pred, dataset_rows["size_mm"]), "predictions": pred}
    err = angular_error(pred, dataset_rows["theta_deg"])
    return {"rmse": float(np.sqrt(np.mean(err**2))), "mae": float(np.mean(np.abs(err))), "predictions": pred}


def _rows(dataset, idx):
    return {k: np.asarray(v)[idx] for k, v in dataset.labels.items()} if hasattr(dataset, "labels") \
        else {k: np.asarray(v)[idx] for k, v in dataset.items()}


def heldout_split(dataset):
    """(cv_indices, test_indices): samples of held-out classes form the test set."""
    held = np.isin(np.asarray(dataset["object_class"]), np.asarray(getattr(dataset, "heldout_classes", ()), dtype=int))
    return np.flatnonzero(~held), np.flatnonzero(held)


@dataclass
class CvResult:
    task: str
    model: str
    plan: FoldPlan
    fold_metrics: list
    test_metrics: list
    predictors: list
    config_hash: str = ""

    def summary(self, key):
        return Metrics([m[key] for m in self.fold_metrics])

    def test_summary(self, key):
        return Metrics([m[key] for m in self.test_metrics]) if self.test_metrics else None

    def confusion(self):
        if self.task != "classify":
            return None
        return sum(m["confusion"] for m in self.fold_metrics)

    def to_dict(self):
        key = "accuracy" if self.task == "classify" else "rmse"
        out = {
            "task": self.task,
            "model": self.model,
            "config_hash": self.config_hash,
            "n_folds": self.plan.n_folds,
            "grouping": self.plan.grouping,
            "metric": key,
            "validation": self.summary(key).to_dict(),
            "fold_sizes": [[int(len(t)), int(len(v))] for t, v in self.plan],
        }
        if self.task == "classify":
            out["confusion_per_fold"] = [m["confusion"].tolist() for m in self.fold_metrics]
            out["confusion"] = self.confusion().tolist()
            if "sorting" in self.fold_metrics[0]:
                out["sorting_per_fold"] = [m["sorting"] for m in self.fold_metrics]
        if self.task == "regress-theta":
            out["validation_mae"] = self.summary("mae").to_dict()
        if self.test_metrics:
            out["test"] = self.test_summary(key).to_dict()
            if self.task == "regress-theta":
                out["test_mae"] = self.test_summary("mae").to_dict()
        return out


def run_cv(dataset, features, task: str, config: ModelConfig = ModelConfig(), n_folds: int = 5,
           grouping: str = "by_pose", seed: int = 0, use_heldout: bool = True, plan: FoldPlan | None = None,
           train_filter=None) -> CvResult:
    """Cross-validate one model on one task.

    Held-out classes (unseen sizes or rotations) are excluded from the folds
    and scored separately by every fold's model. ``train_filter(fold, idx)``
    may shrink a fold's training indices (used by the pose-count sweep).
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; choose from {TASKS}")
    features = np.asarray(features)
    targets = task_targets(dataset, task)
    n_classes = int(np.max(dataset["object_class"])) + 1
    cv_idx, test_idx = heldout_split(dataset) if use_heldout else (np.arange(len(features)), np.array([], int))
    plan = plan or make_folds(dataset, n_folds, grouping, seed, indices=cv_idx)
    fold_metrics, test_metrics, predictors = [], [], []
    for fold, (tr, va) in enumerate(plan):
        if train_filter is not None:
            tr = train_filter(fold, tr)
        fold_cfg = replace(config, train=replace(config.train, seed=config.train.seed + fold))
        pred = fit_predictor(fold_cfg, task, features[tr], targets[tr], n_classes)
        fold_metrics.append(score(task, pred, features[va], _rows(dataset, va), n_classes))
        if len(test_idx):
            test_metrics.append(score(task, pred, features[test_idx], _rows(dataset, test_idx), n_classes))
        predictors.append(pred)
        key = "accuracy" if task == "classify" else "rmse"
        log.info("%s/%s fold %d: %s=%.4f", task, config.model, fold, key, fold_metrics[-1][key])
    return CvResult(task, config.model, plan, fold_metrics, test_metrics, predictors, config.config_hash())


def mean_predictor_rmse(dataset, plan: FoldPlan) -> Metrics:
    """RMSE of predicting the training-fold mean size on each validation fold."""
    y = np.asarray(dataset["size_mm"], dtype=np.float64)
    return Metrics([rmse(np.full(len(va), y[tr].mean()), y[va]) for tr, va in plan])


def pose_subset(dataset, train_idx, count: int, seed: int):
    """Keep the training samples of ``count`` seeded-randomly chosen pose ids."""
    poses = np.asarray(dataset["pose_id"])[train_idx]
    available = np.unique(poses)
    if count > len(available):
        raise ConfigError(f"requested {count} poses but only {len(available)} are available for training")
    keep = np.random.default_rng([seed, 13]).permutation(available)[:count]
    return train_idx[np.isin(poses, keep)]


def pose_count_sweep(dataset, features, pose_counts, seeds=(0,), config: ModelConfig = ModelConfig(),
                     n_folds: int = 5, plan: FoldPlan | None = None, cache: dict | None = None) -> dict:
    """Validation accuracy versus the number of training poses per object.

    ``cache`` may map a pose count to an already computed CvResult (for
    instance the main run at the full pose count).
    """
    out = {}
    for count in pose_counts:
        accs = []
        for s in seeds:
            if cache and count in cache and s == seeds[0]:
                res = cache[count]
            else:
                res = run_cv(dataset, features, "classify", replace(config, train=replace(config.train, seed=s)),
                             n_folds=n_folds, seed=0, plan=plan,
                             train_filter=lambda fold, tr, c=count, s=s: pose_subset(dataset, tr, c, s * 1000 + fold))
            accs.extend(m["accuracy"] for m in res.fold_metrics)
        out[int(count)] = Metrics(accs)
    return out


def smallest_count_reaching(sweep: dict, level: float = 0.8):
    for count in sorted(sweep):
        if sweep[count].mean >= level:
            return count
    return None


def noise_robustness_sweep(result: CvResult, dataset, noise_levels, feature_config=FeatureConfig()) -> dict:
    """Evaluation-only: re-render each fold's validation recordings at every noise level."""
    from .cavity_sim import rerender

    if result.task == "classify":
        raise ConfigError("noise robustness is measured on a regression task")
    out = {}
    for level in noise_levels:
        per_fold = []
        for (tr, va), pred in zip(result.plan, result.predictors):
            if level == dataset["noise_level"][va[0]]:
                recs = dataset.recordings[va]
            else:
                recs = rerender(dataset, va, level)
            x = extract_features(recs, feature_config)
            per_fold.append(score(result.task, pred, x, _rows(dataset, va), 0)["rmse"])
        out[float(level)] = Metrics(per_fold)
    return out


# ---------------------------------------------------------------------------
# results files

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, Metrics):
        return obj.to_dict()
    return obj


def write_results(path, results: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(results), indent=1, sort_keys=True) + "\n")
    return path


def results_hash(payload) -> str:
    return hashlib.sha256(json.dumps(_clean(payload), sort_keys=True).encode()).hexdigest()[:16]
