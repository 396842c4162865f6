"""Command-line entry point: ``synth``, ``train``, ``embed`` and ``report``.

Settings are layered: built-in defaults < scenario preset < JSON config file
< command-line flags. Every output lands in a hash-named directory below
``--out`` so reruns with the same settings reproduce the same paths and bytes.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .cavity_sim import (MEDIA, SCENARIOS, Dataset, ExperimentSpec, GripperConfig, canonical_scenario,
                         generate_dataset)
from .embed import (ContrastiveConfig, distance_matrix, encode, export_embeddings, mean_pair_distances,
                    train_embedding)
from .errors import ConfigError, JamSenseError
from .eval import (MODELS, TASKS, ModelConfig, make_folds, mean_predictor_rmse, noise_robustness_sweep,
                   pose_count_sweep, results_hash, run_cv, smallest_count_reaching, write_results)
from .features import FeatureConfig, extract_features, load_feature_cache, save_feature_cache
from .models.checkpoint import save_checkpoint
from .models.knn import knn_predict_batch
from .models.training import TrainConfig
from .signal import AudioClip, relative_reflected_energy

log = logging.getLogger("jamsense")

CONFIG_KEYS = {"scenario", "seed", "overrides", "gripper", "features", "train", "model", "task", "folds",
               "noise_dba", "latent_dim", "poses_per_object", "pose_counts", "contrastive", "epochs",
               "model_options"}
# per-model epoch defaults; the CNN converges in far fewer passes than the linear models
DEFAULT_EPOCHS = {"cnn": 60, "mlp": 200, "lr": 200, "knn": 1}
EMBED_EPOCHS = 40


def _digest(obj, n=12) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:n]


def file_digest(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


def _list(value, cast):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(v) for v in str(value).split(",") if v.strip()]


# ---------------------------------------------------------------------------
# settings

def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; valid keys: {sorted(CONFIG_KEYS)}")
    return cfg


def resolve(args) -> dict:
    """Merge the config file with flags (flags win)."""
    s = load_config(args.config)
    s.setdefault("seed", 0)
    s["overrides"] = dict(s.get("overrides", {}))
    for flag in ("scenario", "seed", "task", "folds", "epochs"):
        v = getattr(args, flag, None)
        if v is not None:
            s[flag] = v
    for flag, cast in (("model", str), ("latent_dim", int), ("pose_counts", int)):
        v = getattr(args, flag, None)
        if v is not None:
            s[flag] = _list(v, cast)
    noise = getattr(args, "noise_dba", None)
    if noise is not None:
        s["noise_dba"] = _list(noise, float)
    ppo = getattr(args, "poses_per_object", None)
    if ppo is not None:
        s["overrides"]["poses_per_object"] = ppo
    return s


def gripper_from(settings) -> GripperConfig:
    return GripperConfig.from_dict(settings.get("gripper", {}))


def feature_config_from(settings) -> FeatureConfig:
    return FeatureConfig(**settings.get("features", {}))


# ---------------------------------------------------------------------------
# datasets and features

def dataset_key(scenario, seed, overrides, gripper: GripperConfig) -> str:
    return f"{scenario}-{_digest([scenario, seed, overrides, gripper.config_hash()])}"


def synthesize(settings, out: Path, noise_override=None):
    """Generate (or reuse) the dataset described by ``settings``; returns (dataset, directory, created)."""
    if "scenario" not in settings:
        raise ConfigError("no scenario given (use --scenario or a config file)")
    scenario = canonical_scenario(settings["scenario"])
    overrides = dict(settings.get("overrides", {}))
    if noise_override is not None:
        overrides["noise_level"] = noise_override
    gripper = gripper_from(settings)
    directory = out / "datasets" / dataset_key(scenario, int(settings["seed"]), overrides, gripper)
    if (directory / "manifest.json").exists():
        log.info("dataset %s exists; reusing it unchanged", directory)
        return Dataset.load(directory), directory, False
    ds = generate_dataset(ExperimentSpec(scenario, overrides, int(settings["seed"])), config=gripper)
    directory.parent.mkdir(parents=True, exist_ok=True)
    # build next to the target, then move into place so readers never see a partial dataset
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=directory.parent))
    try:
        ds.save(tmp)
        if ds.task == "energy":
            write_energy_table(tmp, energy_table(ds))
        tmp.rename(directory)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    return ds, directory, True


def open_dataset(settings, args, out: Path):
    if getattr(args, "dataset", None):
        path = Path(args.dataset)
        return Dataset.load(path), path
    ds, path, _ = synthesize(settings, out)
    return ds, path


def dataset_features(ds: Dataset, directory: Path, out: Path, config: FeatureConfig) -> np.ndarray:
    cache = out / "features" / f"{directory.name}-{file_digest(directory / 'manifest.json')}"
    hit = load_feature_cache(cache, config)
    if hit is not None and len(hit[0]) == len(ds):
        return hit[0].astype(np.float64)
    x = extract_features(ds.recordings, config)
    save_feature_cache(cache, x, [int(i) for i in ds["sample_id"]], config)
    # round-trip through float32 so a fresh run and a cached run see identical inputs
    return x.astype(np.float32).astype(np.float64)


def energy_table(ds: Dataset) -> list[dict]:
    media = list(ds["medium"])
    if "empty" not in media:
        raise ConfigError("energy table needs an empty-gripper reference recording")
    ref = AudioClip(ds.recordings[media.index("empty")].astype(np.float64))
    rows = []
    for m in MEDIA:
        if m in media:
            clip = AudioClip(ds.recordings[media.index(m)].astype(np.float64))
            rows.append({"medium": m, "relative_energy": relative_reflected_energy(clip, ref)})
    return rows


def write_energy_table(directory: Path, rows) -> None:
    with open(directory / "energy_ratios.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["medium", "relative_energy"])
        for r in rows:
            w.writerow([r["medium"], repr(float(r["relative_energy"]))])


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    settings = resolve(args)
    out = Path(args.out)
    ds, directory, created = synthesize(settings, out, noise_override=_single_noise(settings))
    digest = file_digest(directory / "samples.f32", directory / "labels.csv")
    print(f"{'wrote' if created else 'reused'} {directory} ({len(ds)} samples, data hash {digest})")
    if ds.task == "energy":
        print(f"{'medium':<12} relative energy")
        for r in energy_table(ds):
            print(f"{r['medium']:<12} {r['relative_energy']:.4f}")
    return 0


def _single_noise(settings):
    levels = settings.get("noise_dba")
    if not levels:
        return None
    if len(levels) != 1:
        raise ConfigError("synth takes a single --noise-dba level")
    return levels[0]


def model_configs(settings) -> list[ModelConfig]:
    names = settings.get("model") or ["cnn"]
    if isinstance(names, str):
        names = [names]
    bad = [m for m in names if m not in MODELS]
    if bad:
        raise ConfigError(f"unknown model {bad[0]!r}; valid models: {', '.join(MODELS)}")
    extra = dict(settings.get("train", {}))
    out = []
    for m in names:
        train_kw = {"epochs": settings.get("epochs") or DEFAULT_EPOCHS[m], "seed": int(settings["seed"]), **extra}
        model_kw = dict(settings.get("model_options", {}))
        out.append(ModelConfig(m, TrainConfig(**train_kw), **model_kw))
    return out


def cmd_train(args) -> int:
    settings = resolve(args)
    out = Path(args.out)
    configs = model_configs(settings)  # validate names before any heavy work
    ds, directory = open_dataset(settings, args, out)
    task = settings.get("task") or ds.task
    if task not in TASKS:
        raise ConfigError(f"task {task!r} cannot be trained; choose from {TASKS}")
    n_folds = int(settings.get("folds", 5))
    features = dataset_features(ds, directory, out, feature_config_from(settings))
    plan_seed = int(settings["seed"])
    grouping = "by_pose"
    cv_idx = None
    if task != "classify" and ds.heldout_classes:
        held = np.isin(ds["object_class"], ds.heldout_classes)
        cv_idx = np.flatnonzero(~held)
    plan = make_folds(ds, n_folds, grouping, plan_seed, indices=cv_idx)

    run_id = _digest({"dataset": file_digest(directory / "manifest.json"), "task": task, "folds": n_folds,
                      "models": [c.config_hash() for c in configs], "noise": settings.get("noise_dba"),
                      "pose_counts": settings.get("pose_counts"), "seed": plan_seed})
    run_dir = out / "runs" / f"train-{task}-{run_id}"
    results = {"kind": "train", "task": task, "dataset": _dataset_summary(ds, directory),
               "plan": plan.to_dict(), "models": {}}
    cv_results = {}
    for cfg in configs:
        res = run_cv(ds, features, task, cfg, n_folds, grouping, plan_seed, plan=plan)
        cv_results[cfg.model] = res
        results["models"][cfg.model] = {**res.to_dict(), "model_config": cfg.to_dict()}
        for fold, pred in enumerate(res.predictors):
            if pred.params is not None:
                save_checkpoint(run_dir / "checkpoints" / f"{cfg.model}-fold{fold}", pred.params, cfg.config_hash())

    if task != "classify":
        results["mean_predictor"] = mean_predictor_rmse(ds, plan).to_dict() if task == "regress-size" else None
        levels = settings.get("noise_dba")
        if levels:
            results["noise"] = {m: {str(k): v.to_dict() for k, v in
                                    noise_robustness_sweep(r, ds, levels, feature_config_from(settings)).items()}
                                for m, r in cv_results.items()}
    counts = settings.get("pose_counts")
    if counts:
        if task != "classify":
            raise ConfigError("the pose-count sweep applies to classification")
        cfg = configs[0]
        # the main run already covers "all training poses"
        n_train_poses = len(np.unique(ds["pose_id"][plan.train[0]]))
        sweep = pose_count_sweep(ds, features, counts, (plan_seed,), cfg, n_folds, plan,
                                 cache={n_train_poses: cv_results[cfg.model]})
        results["pose_sweep"] = {"model": cfg.model, "accuracy": {str(k): v.to_dict() for k, v in sweep.items()},
                                 "smallest_count_reaching_80": smallest_count_reaching(sweep, 0.8)}
    results["config_hash"] = results_hash({k: v for k, v in results.items() if k != "dataset"})
    write_results(run_dir / "results.json", results)
    print(format_train(results))
    print(f"results: {run_dir / 'results.json'}")
    return 0


def _dataset_summary(ds, directory):
    return {"path": str(directory), "scenario": ds.scenario, "seed": ds.seed, "n_samples": len(ds),
            "data_hash": file_digest(directory / "samples.f32", directory / "labels.csv")}


def format_train(results) -> str:
    lines = [f"task {results['task']} on {results['dataset']['scenario']} ({results['dataset']['n_samples']} samples)"]
    metric = "accuracy" if results["task"] == "classify" else "rmse"
    lines.append(f"{'model':<6} {'mean ' + metric:>14} {'variance':>10} {'test':>8}")
    for name, r in results["models"].items():
        test = r.get("test", {}).get("mean")
        lines.append(f"{name:<6} {r['validation']['mean']:>14.4f} {r['validation']['variance']:>10.5f} "
                     f"{'' if test is None else format(test, '8.4f'):>8}")
    if results.get("mean_predictor"):
        lines.append(f"mean predictor rmse {results['mean_predictor']['mean']:.4f}")
    for name, table in results.get("noise", {}).items():
        lines.append(f"{name} rmse by noise level: " +
                     ", ".join(f"{k} dBA {v['mean']:.4f}" for k, v in table.items()))
    if "pose_sweep" in results:
        ps = results["pose_sweep"]
        lines.append(f"pose-count sweep ({ps['model']}):")
        for k, v in ps["accuracy"].items():
            lines.append(f"  {k:>3} poses  {v['mean']:.4f}")
    return "\n".join(lines)


def cmd_embed(args) -> int:
    settings = resolve(args)
    out = Path(args.out)
    ds, directory = open_dataset(settings, args, out)
    if ds.task != "classify":
        raise ConfigError("embeddings need an object-classification scenario")
    n_folds = int(settings.get("folds", 5))
    dims = settings.get("latent_dim") or [8]
    seed = int(settings["seed"])
    features = dataset_features(ds, directory, out, feature_config_from(settings))
    plan = make_folds(ds, n_folds, "by_pose", seed)
    train_kw = {"epochs": settings.get("epochs") or EMBED_EPOCHS, "seed": seed, **settings.get("train", {})}
    contrastive_kw = dict(settings.get("contrastive", {}))
    y = np.asarray(ds["object_class"])
    run_id = _digest({"dataset": file_digest(directory / "manifest.json"), "dims": dims, "folds": n_folds,
                      "train": train_kw, "contrastive": contrastive_kw, "seed": seed})
    run_dir = out / "runs" / f"embed-{run_id}"
    results = {"kind": "embed", "dataset": _dataset_summary(ds, directory), "plan": plan.to_dict(),
               "train": train_kw, "contrastive": contrastive_kw, "latent": {}}

    raw_acc = [float(np.mean(knn_predict_batch(features[tr], y[tr], features[va], 5) == y[va]))
               for tr, va in plan]
    results["raw_knn_accuracy"] = {"per_fold": raw_acc, "mean": float(np.mean(raw_acc))}
    has_categories = bool(ds.categories)
    for dim in dims:
        cfg = ContrastiveConfig(latent_dim=dim, **contrastive_kw)
        z_all = np.zeros((len(ds), dim))
        per_fold = []
        for fold, (tr, va) in enumerate(plan):
            enc = train_embedding(features[tr], {"object_class": y[tr], "pose_id": ds["pose_id"][tr]}, cfg,
                                  TrainConfig(**{**train_kw, "seed": seed + fold}))
            save_checkpoint(run_dir / f"d{dim}" / "checkpoints" / f"encoder-fold{fold}", enc, _digest(asdict(cfg)))
            zt, zv = encode(enc, features[tr]), encode(enc, features[va])
            z_all[va] = zv
            intra, inter = mean_pair_distances(zv, y[va])
            acc = float(np.mean(knn_predict_batch(zt, y[tr], zv, 5) == y[va]))
            entry = {"knn_accuracy": acc, "intra": intra, "inter": inter,
                     "final_loss": enc.meta["history"][-1]}
            if has_categories:
                cats = np.array([ds.categories[int(c)] for c in y[va]])
                entry["distance_matrix"] = distance_matrix(zv, cats).tolist()
            per_fold.append(entry)
        val = np.concatenate([va for _, va in plan])
        export_embeddings(run_dir / f"d{dim}" / "embeddings.csv", ds["sample_id"][val], y[val],
                          ds["pose_id"][val], z_all[val])
        summary = {"per_fold": per_fold, "knn_accuracy": float(np.mean([e["knn_accuracy"] for e in per_fold])),
                   "intra_lt_inter_all_folds": all(e["intra"] < e["inter"] for e in per_fold)}
        if has_categories:
            summary["distance_matrix"] = np.mean([e["distance_matrix"] for e in per_fold], axis=0).tolist()
            summary["categories"] = ["spherical", "cylindrical", "other"]
        results["latent"][str(dim)] = summary
    results["config_hash"] = results_hash({k: v for k, v in results.items() if k != "dataset"})
    write_results(run_dir / "results.json", results)
    print(format_embed(results))
    print(f"results: {run_dir / 'results.json'}")
    return 0


def format_embed(results) -> str:
    lines = [f"raw-feature k-NN accuracy {results['raw_knn_accuracy']['mean']:.4f}",
             f"{'latent':>6} {'k-NN acc':>9} {'intra<inter':>12}"]
    for dim, s in results["latent"].items():
        lines.append(f"{dim:>6} {s['knn_accuracy']:>9.4f} {str(s['intra_lt_inter_all_folds']):>12}")
    for dim, s in results["latent"].items():
        if "distance_matrix" in s:
            lines.append(f"category distance matrix (latent {dim}; rows/cols {', '.join(s['categories'])}):")
            lines.extend("  " + " ".join(f"{v:8.4f}" for v in row) for row in s["distance_matrix"])
    return "\n".join(lines)


def summarize_result(path: Path, data: dict) -> dict:
    """One report row per results file; raises KeyError/TypeError on malformed content."""
    kind = data["kind"]
    row = {"path": str(path), "kind": kind, "config_hash": data["config_hash"],
           "scenario": data["dataset"]["scenario"]}
    if kind == "train":
        row["task"] = data["task"]
        for name, r in data["models"].items():
            row[f"{name}_{r['metric']}"] = r["validation"]["mean"]
            if "test" in r:
                row[f"{name}_test_{r['metric']}"] = r["test"]["mean"]
    elif kind == "embed":
        row["raw_knn_accuracy"] = data["raw_knn_accuracy"]["mean"]
        for dim, s in data["latent"].items():
            row[f"embed_d{dim}_knn_accuracy"] = s["knn_accuracy"]
    else:
        raise KeyError(f"unknown result kind {kind!r}")
    return row


def cmd_report(args) -> int:
    root = Path(args.results_dir)
    if not root.exists():
        raise ConfigError(f"results directory {root} does not exist")
    rows, bad = [], []
    for path in sorted(root.rglob("results.json")):
        try:
            rows.append(summarize_result(path.parent, json.loads(path.read_text())))
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as e:
            bad.append(path)
            print(f"warning: skipping malformed {path}: {e!r}", file=sys.stderr)
    if not rows:
        print("no results")
    for row in rows:
        head = f"[{row['kind']}] {row['scenario']} {row.get('task', '')} config {row['config_hash']}"
        print(" ".join(head.split()))
        for k, v in row.items():
            if isinstance(v, float):
                print(f"  {k:<32} {v:.4f}")
    if args.csv and rows:
        keys = sorted({k for r in rows for k in r})
        with open(args.csv, "w", newline="") as f:
            w = csv.DictWriter(f, keys, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    if bad and args.strict:
        return 3
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jamsense", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="JSON settings file")
        sp.add_argument("--out", default="jamsense-out", help="output root (default: %(default)s)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scenario", help=f"one of {', '.join(SCENARIOS)}")
        sp.add_argument("--poses-per-object", type=int)
        if dataset:
            sp.add_argument("--dataset", help="existing dataset directory (instead of --scenario)")
            sp.add_argument("--folds", type=int)
            sp.add_argument("--epochs", type=int)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    common(s, dataset=False)
    s.add_argument("--noise-dba", help="ambient noise level of the recordings")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="cross-validate models on a dataset")
    common(t)
    t.add_argument("--model", help=f"comma-separated list from {', '.join(MODELS)}")
    t.add_argument("--task", choices=TASKS)
    t.add_argument("--noise-dba", help="comma-separated evaluation noise levels (regression)")
    t.add_argument("--pose-counts", help="comma-separated training pose counts to sweep (classification)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="train contrastive embeddings and analyse the latent space")
    common(e)
    e.add_argument("--latent-dim", help="latent size, or a comma-separated list to sweep")
    e.set_defaults(func=cmd_embed)

    r = sub.add_parser("report", help="summarize results files below a directory")
    r.add_argument("results_dir")
    r.add_argument("--csv", help="also write a flat CSV table here")
    r.add_argument("--strict", action="store_true", help="exit nonzero if any results file is malformed")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except JamSenseError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
