import json
from math import sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamsense.cavity_sim import CUBE_SIZES, ExperimentSpec, generate_dataset
from jamsense.errors import ConfigError, LabelError, ParameterError
from jamsense.eval import (ABSTAIN, Metrics, ModelConfig, angular_error, confusion_and_accuracy, decode_theta,
                           make_folds, mean_predictor_rmse, noise_robustness_sweep, pose_count_sweep, pose_subset,
                           results_hash, rmse, run_cv, smallest_count_reaching, sorting_decision, sorting_summary,
                           task_targets, write_results)
from jamsense.features import extract_features
from jamsense.models.training import TrainConfig


def pose_grid(n_objects, n_poses, n_samples):
    return {"object_class": np.repeat(np.arange(n_objects), n_poses * n_samples),
            "pose_id": np.tile(np.repeat(np.arange(n_poses), n_samples), n_objects)}


def test_twenty_poses_five_folds():
    plan = make_folds(pose_grid(16, 20, 2), 5, "by_pose", seed=0)
    ds = pose_grid(16, 20, 2)
    for tr, va in plan:
        assert len(np.unique(ds["pose_id"][va])) == 4
        assert len(np.unique(ds["pose_id"][tr])) == 16
        assert len(va) == 16 * 4 * 2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(2, 12), st.integers(1, 3), st.integers(2, 6), st.integers(0, 50),
       st.sampled_from(["by_pose", "by_sample"]))
def test_partition_laws(n_obj, n_pose, n_samp, n_folds, seed, grouping):
    ds = pose_grid(n_obj, n_pose, n_samp)
    n_groups = n_pose if grouping == "by_pose" else n_obj * n_pose * n_samp
    if n_groups < n_folds:
        with pytest.raises(ConfigError):
            make_folds(ds, n_folds, grouping, seed)
        return
    plan = make_folds(ds, n_folds, grouping, seed)
    vals = np.concatenate(plan.val)
    assert sorted(vals) == list(range(len(ds["pose_id"])))
    sizes = []
    for tr, va in plan:
        assert not set(tr) & set(va)
        assert len(tr) + len(va) == len(ds["pose_id"])
        if grouping == "by_pose":
            assert not set(ds["pose_id"][tr]) & set(ds["pose_id"][va])
            sizes.append(len(np.unique(ds["pose_id"][va])))
        else:
            sizes.append(len(va))
    # 80:20 up to one group
    assert max(sizes) - min(sizes) <= 1
    again = make_folds(ds, n_folds, grouping, seed)
    assert all(np.array_equal(a, b) for a, b in zip(plan.val, again.val))


def test_bad_grouping():
    with pytest.raises(ConfigError):
        make_folds(pose_grid(1, 5, 1), 5, "by_object")


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([1.0, 1.0], [0.0, 2.0]) == 1.0
    with pytest.raises(ParameterError):
        rmse([], [])


def test_mean_predictor_rmse_on_cube_grid():
    sizes = np.array(CUBE_SIZES)
    by_hand = sqrt(sum((s - sum(sizes) / 16) ** 2 for s in sizes) / 16)
    assert rmse(np.full(16, sizes.mean()), sizes) == pytest.approx(by_hand, rel=1e-12)
    # closed form for an evenly spaced grid: step * sqrt((n^2 - 1) / 12)
    assert by_hand == pytest.approx(20 / 15 * sqrt((16**2 - 1) / 12), rel=1e-12)
    assert by_hand == pytest.approx(6.146, abs=1e-3)


def test_confusion_examples():
    labels = np.array([0, 1, 2, 2, 1])
    conf, acc = confusion_and_accuracy(labels, labels, 3)
    assert acc == 1.0 and np.array_equal(conf, np.diag([1, 2, 2]))
    conf, acc = confusion_and_accuracy(np.zeros(5, int), labels, 3)
    assert acc == pytest.approx(1 / 5)
    assert list(conf.sum(axis=1)) == [1, 2, 2]
    with pytest.raises(LabelError):
        confusion_and_accuracy([3], [0], 3)


def test_random_guessing_within_binomial_bound():
    rng = np.random.default_rng(0)
    n, p = 4000, 1 / 16
    _, acc = confusion_and_accuracy(rng.integers(0, 16, n), rng.integers(0, 16, n), 16)
    assert abs(acc - p) <= 3 * sqrt(p * (1 - p) / n)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10))
def test_metrics_aggregation(values):
    m = Metrics(values)
    assert m.mean == pytest.approx(sum(values) / len(values), rel=1e-12, abs=1e-15)
    assert m.variance == pytest.approx(np.var(values), abs=1e-15)


def test_sorting_decision_examples():
    p = np.full(16, 0.05 / 15)
    p[3] = 0.95
    assert sorting_decision(p, 0.6) == 3
    q = np.zeros(16)
    q[[1, 2]] = 0.45
    q[5] = 0.10
    assert sorting_decision(q, 0.6) is ABSTAIN
    assert sorting_decision(q, 0.0) == 1


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_sorting_decision_permutation_invariant(seed, threshold):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(16) * 0.3)
    perm = rng.permutation(16)
    a = sorting_decision(p, threshold)
    b = sorting_decision(p[perm], threshold)
    if a is ABSTAIN:
        assert b is ABSTAIN
    else:
        assert perm[b] == a


@pytest.mark.parametrize("p", [[0.5, 0.6], [1.2, -0.2], [np.nan, 1.0], [1.0]])
def test_sorting_decision_rejects_bad_distributions(p):
    with pytest.raises(ParameterError):
        sorting_decision(p)


def test_sorting_summary_excludes_abstentions():
    probs = np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8], [0.7, 0.3]])
    s = sorting_summary(probs, [0, 0, 0, 1])
    assert s["decided"] == 3 and s["abstained"] == 1
    assert s["accuracy_on_decided"] == pytest.approx(1 / 3)


def test_angles():
    assert angular_error([179.0], [1.0])[0] == pytest.approx(-2.0)
    assert angular_error([10.0], [170.0])[0] == pytest.approx(20.0)
    ds = {"theta_deg": np.array([0.0, 45.0, 90.0, 171.0])}
    np.testing.assert_allclose(decode_theta(task_targets(ds, "regress-theta")), ds["theta_deg"], atol=1e-9)


def test_unknown_model_lists_valid_names():
    with pytest.raises(ConfigError, match="cnn, mlp, lr, knn"):
        ModelConfig("svm")


# ---------------------------------------------------------------------------
# experiment runners on small data

def blob_dataset(n_objects=3, n_poses=10, n_samples=2, dim=24, seed=0):
    rng = np.random.default_rng(seed)
    ds = pose_grid(n_objects, n_poses, n_samples)
    centers = rng.standard_normal((n_objects, dim))
    x = centers[ds["object_class"]] + 0.6 * rng.standard_normal((len(ds["pose_id"]), dim))
    return ds, x


def test_run_cv_classification():
    ds, x = blob_dataset()
    res = run_cv(ds, x, "classify", ModelConfig("lr", TrainConfig(epochs=20)), n_folds=5, use_heldout=False)
    assert len(res.fold_metrics) == 5
    conf = res.confusion()
    assert conf.sum() == len(x)
    for m, (_, va) in zip(res.fold_metrics, res.plan):
        assert list(m["confusion"].sum(axis=1)) == list(np.bincount(ds["object_class"][va], minlength=3))
        assert m["sorting"]["decided"] + m["sorting"]["abstained"] == len(va)
    d = res.to_dict()
    assert d["validation"]["mean"] == pytest.approx(np.mean([m["accuracy"] for m in res.fold_metrics]))
    knn = run_cv(ds, x, "classify", ModelConfig("knn"), plan=res.plan, use_heldout=False)
    assert knn.plan is res.plan


def test_pose_sweep_full_count_reproduces_main_run():
    ds, x = blob_dataset(n_poses=10)
    cfg = ModelConfig("lr", TrainConfig(epochs=10))
    main = run_cv(ds, x, "classify", cfg, use_heldout=False)
    sweep = pose_count_sweep(ds, x, [2, 8], (0,), cfg, plan=main.plan)
    assert sweep[8].per_fold == [m["accuracy"] for m in main.fold_metrics]
    assert smallest_count_reaching(sweep, 0.0) == 2
    assert smallest_count_reaching(sweep, 1.01) is None
    with pytest.raises(ConfigError):
        pose_subset(ds, main.plan.train[0], 9, 0)


def test_pose_subset_keeps_whole_poses():
    ds, _ = blob_dataset(n_poses=10)
    tr = np.arange(len(ds["pose_id"]))
    sub = pose_subset(ds, tr, 3, seed=1)
    assert len(np.unique(ds["pose_id"][sub])) == 3
    assert len(sub) == 3 * 3 * 2


@pytest.fixture(scope="module")
def small_sizes():
    ds = generate_dataset(ExperimentSpec("sizes", {"poses_per_object": 5}), 0)
    return ds, extract_features(ds.recordings)


def test_size_regression_with_heldout(small_sizes):
    ds, x = small_sizes
    res = run_cv(ds, x, "regress-size", ModelConfig("lr", TrainConfig(epochs=30)))
    held = set(ds.heldout_classes)
    for tr, va in res.plan:
        assert not held & set(ds["object_class"][tr]) and not held & set(ds["object_class"][va])
    assert len(res.test_metrics) == 5
    base = mean_predictor_rmse(ds, res.plan)
    assert res.summary("rmse").mean < base.mean
    noise = noise_robustness_sweep(res, ds, [45.0, 60.0])
    # same level, same recordings: identical to the baseline
    assert noise[45.0].per_fold == [m["rmse"] for m in res.fold_metrics]
    with pytest.raises(ConfigError):
        run_cv(ds, x, "classify-size")


def test_results_files_are_deterministic(tmp_path):
    payload = {"b": np.float32(1.5), "a": [np.int64(2), Metrics([1.0, 3.0])], "c": np.arange(3)}
    write_results(tmp_path / "r1.json", payload)
    write_results(tmp_path / "r2.json", payload)
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    loaded = json.loads((tmp_path / "r1.json").read_text())
    assert loaded["a"][1]["mean"] == 2.0
    assert results_hash(payload) == results_hash(dict(reversed(list(payload.items()))))
