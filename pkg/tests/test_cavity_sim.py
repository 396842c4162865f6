import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from jamsense.cavity_sim import (CUBE_SIZES, DEFAULT_ABSORPTION, HELDOUT_ANGLES, HELDOUT_SIZES, MATERIALS,
                                 MEDIA, NO_JITTER, ORIENTATION_ANGLES, REFERENCE_AREA, Dataset, ExperimentSpec,
                                 GripperConfig, ModeSet, ObjectState, PoseJitter, build_scenario,
                                 clean_recording, draw_jitter, effective_noise_level, generate_dataset,
                                 material_weight, mode_phases, object_modes, render_impulse_response, rerender,
                                 sample_seed, simulate_recording)
from jamsense.errors import ConfigError, ParameterError
from jamsense.features import features_from_clip
from jamsense.signal import AudioClip, add_noise, generate_log_sweep, relative_reflected_energy, signal_energy

RATE = 44100
SWEEP = generate_log_sweep()


def features(state, jitter=NO_JITTER, config=GripperConfig()):
    return features_from_clip(AudioClip(clean_recording(SWEEP, state, jitter, config))).values


# ---------------------------------------------------------------------------
# modes

def test_modes_deterministic():
    s = ObjectState(20.0, "wood", 30.0, shape="bar")
    assert object_modes(s) == object_modes(s)
    j = draw_jitter(0, 3, 5, 1.0)
    assert object_modes(s, j) == object_modes(s, j)


def test_larger_object_raises_every_mode():
    small = object_modes(ObjectState(10.0))
    big = object_modes(ObjectState(30.0))
    assert np.all(big.frequencies > small.frequencies)


@given(st.floats(1.0, 60.0))
def test_size_coupling_formula(size):
    cfg = GripperConfig()
    ref = object_modes(ObjectState(cfg.reference_size)).frequencies
    f = object_modes(ObjectState(size)).frequencies
    expected = 1 + cfg.size_coupling * (size - cfg.reference_size) / cfg.reference_size
    np.testing.assert_allclose(f / ref, expected, rtol=1e-12)


def test_orientation_changes_amplitudes_with_period_180():
    bar = dict(size=44.0, material="wood", shape="bar")
    a0 = object_modes(ObjectState(orientation_theta=0.0, **bar)).amplitudes
    a90 = object_modes(ObjectState(orientation_theta=90.0, **bar)).amplitudes
    assert not np.allclose(a0, a90)
    # 90 deg object rotation plus a 90 deg gripper rotation is a half turn
    a180 = object_modes(ObjectState(orientation_theta=90.0, **bar), PoseJitter(z_rotation=90.0)).amplitudes
    np.testing.assert_allclose(a180, a0, rtol=1e-12)


@given(st.floats(0, 179.9), st.floats(0, 179.9))
def test_orientation_amplitude_formula(t1, t2):
    cfg = GripperConfig()
    bar = dict(size=44.0, material="wood", shape="bar")  # full anisotropy
    a1 = object_modes(ObjectState(orientation_theta=t1, **bar)).amplitudes
    a2 = object_modes(ObjectState(orientation_theta=t2, **bar)).amplitudes
    psi = mode_phases(cfg.n_modes)
    beta = cfg.orientation_coupling
    m1 = 1 + beta * np.cos(2 * np.deg2rad(t1) + psi)
    m2 = 1 + beta * np.cos(2 * np.deg2rad(t2) + psi)
    np.testing.assert_allclose(a1 / a2, m1 / m2, rtol=1e-10)


def test_sphere_ignores_orientation():
    a = object_modes(ObjectState(40.0, shape="sphere", orientation_theta=0.0))
    b = object_modes(ObjectState(40.0, shape="sphere", orientation_theta=60.0))
    assert a == b


def test_recordings_periodic_in_orientation():
    s0 = ObjectState(44.0, "wood", 20.0, shape="bar")
    s1 = ObjectState(44.0, "wood", 110.0, shape="bar")
    r0 = clean_recording(SWEEP, s0, NO_JITTER, GripperConfig())
    r1 = clean_recording(SWEEP, s1, PoseJitter(z_rotation=90.0), GripperConfig())
    np.testing.assert_allclose(r1, r0, rtol=0, atol=1e-12 * np.abs(r0).max())


def test_contact_weight():
    assert REFERENCE_AREA == pytest.approx(np.pi * 80**2 / 2)
    assert material_weight(ObjectState(80.0, shape="sphere"), GripperConfig()) == pytest.approx(1.0)
    w30 = material_weight(ObjectState(30.0, shape="sphere"), GripperConfig())
    assert w30 == pytest.approx((30 / 80) ** 2)
    assert w30 < 1 / 7 + 1e-3
    assert material_weight(ObjectState(200.0, shape="plate"), GripperConfig()) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.25), st.sampled_from(list(itertools.combinations(MATERIALS, 2))))
def test_material_cue_shrinks_with_contact_area(fraction, pair):
    """Material-induced damping difference at area <= A_ref/4 is >= 4x smaller than at A_ref."""
    base = np.asarray(GripperConfig().base_dampings)

    def damping_gap(area):
        a, b = (object_modes(ObjectState(80.0, m, shape="sphere", contact_area=area)).dampings for m in pair)
        return np.abs(a - b) / base
    full = damping_gap(REFERENCE_AREA)
    small = damping_gap(fraction * REFERENCE_AREA)
    np.testing.assert_allclose(small, fraction * full, rtol=1e-9)
    assert np.all(small * 4 <= full + 1e-12)
    assert full.max() > 0


def test_materials_separate_beyond_noise_at_full_contact():
    cfg = GripperConfig()
    states = [ObjectState(80.0, m, shape="sphere") for m in MATERIALS]
    clean = [features(s) for s in states]
    noisy = np.array([features_from_clip(simulate_recording(SWEEP, states[0], NO_JITTER, cfg, 45, seed)).values
                      for seed in range(8)])
    per_feature_std = float(np.sqrt(np.mean(noisy.var(axis=0))))
    min_gap = min(np.linalg.norm(a - b) for a, b in itertools.combinations(clean, 2))
    assert min_gap > 10 * per_feature_std


def test_small_sphere_material_cue_is_buried_in_noise():
    cfg = GripperConfig()
    states = [ObjectState(30.0, m, shape="sphere") for m in MATERIALS]
    clean = [features(s) for s in states]
    displacement = np.sqrt(np.mean([
        np.sum((features_from_clip(simulate_recording(SWEEP, states[0], NO_JITTER, cfg, 45, seed)).values
                - clean[0]) ** 2) for seed in range(8)]))
    assert max(np.linalg.norm(a - b) for a, b in itertools.combinations(clean, 2)) < displacement


def test_jitter_bounded_relative_to_class_separation():
    """In the bounded-jitter regime no object's pose variation exceeds the closest class gap."""
    objects = build_scenario("ycb16").objects
    nominal = np.array([features(o) for o in objects])
    gap = min(np.linalg.norm(nominal[i] - nominal[j]) for i, j in itertools.combinations(range(len(objects)), 2))
    worst = 0.0
    for o in objects:
        f = [features(o, draw_jitter(0, o.object_class, p, 0.1)) for p in range(4)]
        worst = max(worst, max(np.linalg.norm(a - b) for a, b in itertools.combinations(f, 2)))
    assert worst < gap


# ---------------------------------------------------------------------------
# impulse responses and recordings

def test_empty_modeset_renders_silence():
    clip = render_impulse_response(ModeSet.empty(), 0.1)
    assert len(clip) == 4410 and not clip.samples.any()


def test_single_mode_energy_matches_integral():
    f, d = 1000.0, 50.0
    modes = ModeSet(np.array([f]), np.array([d]), np.array([1.0]), np.array([0.0]))
    clip = render_impulse_response(modes, 0.5)
    integral, _ = quad(lambda t: np.exp(-2 * d * t) * np.sin(2 * np.pi * f * t) ** 2, 0, 0.5, limit=2000)
    assert signal_energy(clip) / RATE == pytest.approx(integral, rel=0.01)


def test_overdamped_mode_vanishes():
    def energy(d):
        return signal_energy(render_impulse_response(
            ModeSet(np.array([1000.0]), np.array([d]), np.array([1.0]), np.array([0.0])), 0.5))
    assert energy(1e5) < 1e-4 * energy(50.0)


def test_perfect_absorber_without_noise_is_silent():
    absorption = {**DEFAULT_ABSORPTION, "coffee": 1.0}
    cfg = GripperConfig(medium="coffee", absorption=absorption, floor_sigma=0.0)
    rec = simulate_recording(SWEEP, ObjectState(20.0), NO_JITTER, cfg, 45, seed=0)
    assert not rec.samples.any()


def test_coffee_absorbs_most_energy():
    obj = ObjectState(20.0)
    empty = simulate_recording(SWEEP, obj, config=GripperConfig(medium="empty"))
    coffee = simulate_recording(SWEEP, obj, config=GripperConfig(medium="coffee"))
    assert relative_reflected_energy(coffee, empty) < 0.2


def test_recording_determinism():
    obj, j = ObjectState(20.0), draw_jitter(1, 2, 3, 1.0)
    a = simulate_recording(SWEEP, obj, j, seed=4).samples
    assert np.array_equal(a, simulate_recording(SWEEP, obj, j, seed=4).samples)
    assert not np.array_equal(a, simulate_recording(SWEEP, obj, j, seed=5).samples)
    assert len(a) == len(SWEEP)


def test_membrane_attenuates_external_noise():
    cfg = GripperConfig()
    assert effective_noise_level(45, cfg) == 45
    assert effective_noise_level(80, cfg) == pytest.approx(80 + 20 * np.log10(1 - cfg.membrane_noise_attenuation))
    assert effective_noise_level(46, cfg) == 45
    assert effective_noise_level(80, GripperConfig(membrane_noise_attenuation=0.0)) == pytest.approx(80)
    with pytest.raises(ParameterError):
        effective_noise_level(30, cfg)


# ---------------------------------------------------------------------------
# validation

@pytest.mark.parametrize("kwargs", [dict(size=0.0), dict(size=10.0, material="glass"),
                                    dict(size=10.0, orientation_theta=180.0), dict(size=10.0, shape="torus"),
                                    dict(size=10.0, contact_area=-1.0)])
def test_object_state_validation(kwargs):
    with pytest.raises(ParameterError):
        ObjectState(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(z_rotation=91.0), dict(translation_x=1.5), dict(translation_y=-2.0),
                                    dict(strength=-1.0)])
def test_pose_jitter_validation(kwargs):
    with pytest.raises(ParameterError):
        PoseJitter(**kwargs)


@given(st.integers(0, 2**31), st.integers(0, 50), st.integers(0, 100), st.floats(0, 20))
def test_drawn_jitter_respects_bounds(seed, obj, pose, strength):
    j = draw_jitter(seed, obj, pose, strength)
    assert abs(j.z_rotation) <= 90 and abs(j.translation_x) <= 1 and abs(j.translation_y) <= 1
    assert j == draw_jitter(seed, obj, pose, strength)


@pytest.mark.parametrize("kwargs", [dict(n_modes=3, base_frequencies=(1.0, 2.0, 3.0), base_dampings=(1.0,) * 3),
                                    dict(base_frequencies=tuple(range(12, 0, -1))),
                                    dict(base_dampings=(0.0,) * 12), dict(medium="sand"),
                                    dict(membrane_noise_attenuation=1.5)])
def test_gripper_validation(kwargs):
    with pytest.raises(ParameterError):
        GripperConfig(**kwargs)


def test_gripper_dict_roundtrip():
    cfg = GripperConfig.with_modes(8, output_gain=12.0)
    back = GripperConfig.from_dict(cfg.to_dict())
    assert back.config_hash() == cfg.config_hash()
    with pytest.raises(ConfigError):
        GripperConfig.from_dict({"bogus": 1})


# ---------------------------------------------------------------------------
# scenarios and datasets

def test_ycb16_protocol_counts():
    sc = build_scenario("ycb16")
    assert len(sc.objects) * sc.poses_per_object * sc.samples_per_pose == 16 * 20 * 2 == 640
    assert len({(o.size, o.material, o.shape) for o in sc.objects}) == 16


def test_orientation_grid():
    sc = build_scenario("orientation")
    thetas = sorted(o.orientation_theta for o in sc.objects)
    assert len(thetas) == 19
    assert thetas[0] == 0 and thetas[-1] == 162
    assert np.allclose(np.diff(thetas), 9)
    assert ORIENTATION_ANGLES == tuple(thetas)
    assert len(HELDOUT_ANGLES) == 8 and set(HELDOUT_ANGLES) < set(ORIENTATION_ANGLES)
    assert len(sc.heldout_classes) == 8


def test_size_grid():
    sc = build_scenario("sizes")
    sizes = [o.size for o in sc.objects]
    assert len(sizes) == 16 and min(sizes) == 10 and max(sizes) == 30
    assert sizes == list(CUBE_SIZES)
    assert len(HELDOUT_SIZES) == 4 and set(HELDOUT_SIZES) < set(CUBE_SIZES)


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        build_scenario("moon_rocks")
    with pytest.raises(ConfigError):
        build_scenario("ycb16", {"bogus": 1})


def test_media_scenario_has_every_medium():
    ds = generate_dataset("media_energy", 0)
    assert list(ds["medium"]) == list(MEDIA)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(ExperimentSpec("materials_plates", {"poses_per_object": 3}), 11)


def test_dataset_layout(small_dataset):
    ds = small_dataset
    assert len(ds) == 4 * 3 * 2
    assert ds.recordings.shape == (24, RATE)
    # both samples of a pose share its placement but not their noise
    same = (ds["object_class"] == 0) & (ds["pose_id"] == 1)
    i, j = np.flatnonzero(same)
    assert ds["jitter_seed"][i] == ds["jitter_seed"][j]
    assert ds["translation_x"][i] == ds["translation_x"][j]
    assert not np.array_equal(ds.recordings[i], ds.recordings[j])


def test_rows_reproducible_independently(small_dataset):
    """Any row can be rendered alone from the documented seed rule (parallel == serial)."""
    ds = small_dataset
    sc = build_scenario(ds.scenario, ds.overrides)
    i = 13
    obj = sc.objects[ds["object_class"][i]]
    pose = int(ds["pose_id"][i])
    k = int(np.sum((ds["object_class"][:i] == obj.object_class) & (ds["pose_id"][:i] == pose)))
    jitter = draw_jitter(ds.seed, obj.object_class, pose, sc.jitter_strength)
    cfg = GripperConfig()
    rec = add_noise(AudioClip(clean_recording(SWEEP, obj, jitter, cfg)), effective_noise_level(45, cfg),
                    sample_seed(ds.seed, obj.object_class, pose, k), cfg.floor_sigma)
    assert np.array_equal(rec.samples.astype(np.float32), ds.recordings[i])


def test_dataset_bytes_identical_across_runs(tmp_path, small_dataset):
    again = generate_dataset(ExperimentSpec("materials_plates", {"poses_per_object": 3}), 11)
    small_dataset.save(tmp_path / "a")
    again.save(tmp_path / "b")
    for name in ("samples.f32", "labels.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    other = generate_dataset(ExperimentSpec("materials_plates", {"poses_per_object": 3}), 12)
    assert not np.array_equal(other.recordings, small_dataset.recordings)


def test_dataset_roundtrip(tmp_path, small_dataset):
    small_dataset.save(tmp_path)
    back = Dataset.load(tmp_path)
    assert np.array_equal(back.recordings, small_dataset.recordings)
    for k, v in small_dataset.labels.items():
        assert list(back[k]) == list(v), k
    assert back.gripper.config_hash() == small_dataset.gripper.config_hash()


def test_load_rejects_non_dataset(tmp_path):
    with pytest.raises(ConfigError):
        Dataset.load(tmp_path)


def test_rerender_at_same_level_reproduces(small_dataset):
    idx = [0, 5, 17]
    np.testing.assert_array_equal(rerender(small_dataset, idx, 45.0), small_dataset.recordings[idx])
    louder = rerender(small_dataset, idx, 80.0)
    assert not np.array_equal(louder, small_dataset.recordings[idx])


def test_subset(small_dataset):
    sub = small_dataset.subset([1, 2, 3])
    assert len(sub) == 3
    assert list(sub["sample_id"]) == [1, 2, 3]
