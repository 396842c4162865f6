"""Modal model of the gripper cavity, standing in for the physical sensor.

The cavity response to an excitation is a sum of exponentially damped
sinusoids. Every generative factor (object size, material, orientation,
pose jitter, granular medium) enters through an explicit, inspectable
change to the mode parameters.
"""
from __future__ import annotations

import csv
import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, ParameterError
from .signal import AMBIENT_DBA, AMBIENT_SIGMA, SAMPLE_RATE, AudioClip, SweepSpec, add_noise, generate_log_sweep

SCHEMA_VERSION = 1

MATERIALS = ("metal", "wood", "plastic", "styrofoam")
MEDIA = ("empty", "plastic_bb", "metal_bb", "coffee")
CATEGORIES = ("spherical", "cylindrical", "other")

DEFAULT_ABSORPTION = {"empty": 0.0, "plastic_bb": 0.3, "metal_bb": 0.45, "coffee": 0.85}

# Contact patch of an 80 mm sphere (hemisphere surface).
REFERENCE_AREA = np.pi * 80.0**2 / 2

# contact_area = factor * size**2
SHAPE_AREA_FACTOR = {
    "sphere": np.pi / 2,
    "cube": 3.0,
    "plate": 1.0,
    "bar": 4.0,
    "cylinder": 2.5,
    "block": 3.0,
    "can": 3.0,
    "lock": 2.5,
}

# How strongly rotating the object about the gripper axis changes mode amplitudes.
SHAPE_ANISOTROPY = {"sphere": 0.0, "cube": 0.3, "plate": 0.2, "bar": 1.0, "cylinder": 0.8,
                    "block": 0.5, "can": 0.4, "lock": 0.6}

# (scale, slope across log-frequency) of the per-mode damping multiplier
MATERIAL_DAMPING = {
    "metal": (0.45, -0.25),
    "wood": (1.0, 0.15),
    "plastic": (1.5, -0.1),
    "styrofoam": (2.4, 0.3),
}


def _stable_rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode())


@dataclass(frozen=True)
class ObjectState:
    size: float
    material: str = "plastic"
    orientation_theta: float = 0.0
    object_class: int = 0
    shape: str = "cube"
    name: str = ""
    contact_area: float | None = None

    def __post_init__(self):
        if self.size <= 0:
            raise ParameterError(f"object size must be positive, got {self.size}")
        if self.material not in MATERIALS:
            raise ParameterError(f"unknown material {self.material!r}; choose from {MATERIALS}")
        if not 0 <= self.orientation_theta < 180:
            raise ParameterError(f"orientation must lie in [0, 180), got {self.orientation_theta}")
        if self.shape not in SHAPE_AREA_FACTOR:
            raise ParameterError(f"unknown shape {self.shape!r}")
        if self.contact_area is None:
            object.__setattr__(self, "contact_area", float(SHAPE_AREA_FACTOR[self.shape] * self.size**2))
        if self.contact_area <= 0:
            raise ParameterError("contact_area must be positive")


@dataclass(frozen=True)
class PoseJitter:
    """Placement of the object relative to the gripper for one pose.

    ``strength`` scales the per-mode pseudo-random perturbation drawn from
    ``seed``; strength 0 with zero offsets is the nominal placement.
    """
    z_rotation: float = 0.0
    translation_x: float = 0.0
    translation_y: float = 0.0
    pose_id: int = 0
    strength: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not -90 <= self.z_rotation <= 90:
            raise ParameterError(f"z_rotation must be within +-90 deg, got {self.z_rotation}")
        for t in (self.translation_x, self.translation_y):
            if not -1 <= t <= 1:
                raise ParameterError(f"translations must be within +-1 cm, got {t}")
        if self.strength < 0:
            raise ParameterError("jitter strength must be non-negative")


NO_JITTER = PoseJitter()


def _default_frequencies(n=12):
    return tuple(float(f) for f in np.geomspace(200.0, 8000.0, n))


def _default_dampings(n=12):
    return tuple(30.0 + 0.02 * f for f in _default_frequencies(n))


@dataclass(frozen=True)
class GripperConfig:
    medium: str = "plastic_bb"
    absorption: dict = field(default_factory=lambda: dict(DEFAULT_ABSORPTION))
    n_modes: int = 12
    base_frequencies: tuple = field(default_factory=_default_frequencies)
    base_dampings: tuple = field(default_factory=_default_dampings)
    membrane_noise_attenuation: float = 0.95
    size_coupling: float = 0.15
    orientation_coupling: float = 0.35
    reference_size: float = 20.0
    reference_area: float = REFERENCE_AREA
    output_gain: float = 40.0
    floor_sigma: float = AMBIENT_SIGMA
    ir_duration: float = 0.5
    # pose-jitter magnitudes at strength 1
    jitter_amplitude: float = 0.15
    jitter_frequency: float = 0.003
    jitter_damping: float = 0.1
    jitter_global_damping: float = 0.2
    translation_tilt: float = 0.5
    translation_shift: float = 0.004

    def __post_init__(self):
        if self.medium not in MEDIA:
            raise ParameterError(f"unknown medium {self.medium!r}; choose from {MEDIA}")
        if set(self.absorption) != set(MEDIA):
            raise ParameterError(f"absorption table must cover {MEDIA}")
        if any(not 0 <= a <= 1 for a in self.absorption.values()):
            raise ParameterError("absorption fractions must lie in [0, 1]")
        if self.n_modes < 4:
            raise ParameterError("need at least 4 modes")
        f = np.asarray(self.base_frequencies, dtype=float)
        d = np.asarray(self.base_dampings, dtype=float)
        if f.size != self.n_modes or d.size != self.n_modes:
            raise ParameterError("base_frequencies and base_dampings must have n_modes entries")
        if np.any(np.diff(f) <= 0) or f[0] <= 0 or f[-1] >= SAMPLE_RATE / 2:
            raise ParameterError("base frequencies must be positive, strictly increasing and below Nyquist")
        if np.any(d <= 0):
            raise ParameterError("dampings must be positive")
        if not 0 <= self.membrane_noise_attenuation <= 1:
            raise ParameterError("membrane_noise_attenuation must lie in [0, 1]")

    @classmethod
    def with_modes(cls, n_modes: int, **kw) -> "GripperConfig":
        return cls(n_modes=n_modes, base_frequencies=_default_frequencies(n_modes),
                   base_dampings=_default_dampings(n_modes), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_frequencies"] = [float(v) for v in self.base_frequencies]
        d["base_dampings"] = [float(v) for v in self.base_dampings]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GripperConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown gripper settings {sorted(unknown)}")
        d = dict(d)
        n = int(d.get("n_modes", 12))
        if "n_modes" in d and "base_frequencies" not in d:
            d.setdefault("base_frequencies", _default_frequencies(n))
            d.setdefault("base_dampings", _default_dampings(n))
        for key in ("base_frequencies", "base_dampings"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        if "absorption" in d:
            d["absorption"] = {**DEFAULT_ABSORPTION, **d["absorption"]}
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class ModeSet:
    frequencies: np.ndarray
    dampings: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray

    def __len__(self):
        return self.frequencies.size

    @classmethod
    def empty(cls) -> "ModeSet":
        z = np.zeros(0)
        return cls(z, z, z, z)

    def __eq__(self, other):
        return isinstance(other, ModeSet) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("frequencies", "dampings", "amplitudes", "phases"))


def _shape_signature(shape: str, n: int):
    """Fixed per-shape amplitude and frequency fingerprint."""
    rng = _stable_rng(_name_key(shape), n)
    amp = np.exp(0.4 * rng.standard_normal(n))
    freq = 1.0 + 0.03 * rng.uniform(-1, 1, n)
    return amp, freq


def mode_phases(n: int) -> np.ndarray:
    golden = (np.sqrt(5) - 1) / 2
    return 2 * np.pi * ((np.arange(n) * golden) % 1.0)


def material_weight(state: ObjectState, config: GripperConfig) -> float:
    return min(1.0, state.contact_area / config.reference_area)


def object_modes(state: ObjectState, jitter: PoseJitter = NO_JITTER,
                 config: GripperConfig = GripperConfig()) -> ModeSet:
    n = config.n_modes
    pos = np.linspace(-1.0, 1.0, n)
    phases = mode_phases(n)
    sig_amp, sig_freq = _shape_signature(state.shape, n)

    size_factor = 1.0 + config.size_coupling * (state.size - config.reference_size) / config.reference_size
    freqs = np.asarray(config.base_frequencies) * sig_freq * size_factor

    scale, slope = MATERIAL_DAMPING[state.material]
    multiplier = scale * np.exp(slope * pos)
    damps = np.asarray(config.base_dampings) * (1.0 + material_weight(state, config) * (multiplier - 1.0))

    theta = (state.orientation_theta + jitter.z_rotation) * np.pi / 180
    anis = SHAPE_ANISOTROPY[state.shape]
    amps = sig_amp * (1.0 + config.orientation_coupling * anis * np.cos(2 * theta + phases))

    # translation: spectral tilt along y, uniform frequency shift along x
    amps = amps * np.exp(config.translation_tilt * jitter.translation_y * pos)
    freqs = freqs * (1.0 + config.translation_shift * jitter.translation_x)

    if jitter.strength > 0:
        rng = _stable_rng(jitter.seed, jitter.pose_id)
        u_amp, u_freq, u_damp = rng.uniform(-1, 1, (3, n))
        u_global = rng.uniform(-1, 1)
        s = jitter.strength
        amps = amps * np.exp(s * config.jitter_amplitude * u_amp)
        freqs = freqs * (1.0 + s * config.jitter_frequency * u_freq)
        damps = damps * np.exp(s * (config.jitter_damping * u_damp + config.jitter_global_damping * u_global))

    nyquist = SAMPLE_RATE / 2
    freqs = np.clip(freqs, 1.0, nyquist * 0.98)
    return ModeSet(freqs, damps, np.maximum(amps, 0.0), phases)


def render_impulse_response(modes: ModeSet, duration: float, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """h(t) = sum_k a_k exp(-d_k t) sin(2 pi f_k t + psi_k), sampled."""
    if duration <= 0:
        raise ParameterError("impulse response duration must be positive")
    n = max(1, int(round(duration * sample_rate)))
    t = np.arange(n) / sample_rate
    h = np.zeros(n)
    for f, d, a, psi in zip(modes.frequencies, modes.dampings, modes.amplitudes, modes.phases):
        h += a * np.exp(-d * t) * np.sin(2 * np.pi * f * t + psi)
    return AudioClip(h, sample_rate)


def effective_noise_level(noise_level: float, config: GripperConfig) -> float:
    """External noise reaches the microphone attenuated by the membrane."""
    if noise_level < AMBIENT_DBA:
        raise ParameterError(f"noise level {noise_level} dBA is below the {AMBIENT_DBA} dBA floor")
    if noise_level == AMBIENT_DBA:
        return AMBIENT_DBA
    loss = 1.0 - config.membrane_noise_attenuation
    if loss <= 0:
        return AMBIENT_DBA
    return max(AMBIENT_DBA, noise_level + 20 * np.log10(loss))


def clean_recording(sweep: AudioClip, state: ObjectState, jitter: PoseJitter,
                    config: GripperConfig) -> np.ndarray:
    """Noise-free microphone signal (sweep through the cavity), same length as the sweep."""
    transmission = 1.0 - config.absorption[config.medium]
    if transmission == 0:
        return np.zeros(len(sweep))
    h = render_impulse_response(object_modes(state, jitter, config), config.ir_duration, sweep.sample_rate)
    y = fftconvolve(sweep.samples, h.samples)[: len(sweep)]
    return y * (transmission * config.output_gain / sweep.sample_rate)


def simulate_recording(sweep: AudioClip, state: ObjectState, jitter: PoseJitter = NO_JITTER,
                       config: GripperConfig = GripperConfig(), noise_level: float = AMBIENT_DBA,
                       seed: int = 0) -> AudioClip:
    y = AudioClip(clean_recording(sweep, state, jitter, config), sweep.sample_rate)
    return add_noise(y, effective_noise_level(noise_level, config), seed, config.floor_sigma)


# ---------------------------------------------------------------------------
# Scenarios

CUBE_SIZES = tuple(float(s) for s in np.linspace(10.0, 30.0, 16))
ORIENTATION_ANGLES = tuple(9.0 * k for k in range(19))
# every other interior angle: 9, 27, ..., 135 deg
HELDOUT_ANGLES = tuple(9.0 * k for k in range(1, 17, 2))


def nearest_grid_members(grid, targets):
    grid = np.asarray(grid)
    return tuple(float(grid[np.argmin(np.abs(grid - t))]) for t in targets)


HELDOUT_SIZES = nearest_grid_members(CUBE_SIZES, (12.5, 17.5, 22.5, 27.5))

# name, category, shape, size_mm, material
YCB16 = (
    ("orange", "spherical", "sphere", 70.0, "plastic"),
    ("baseball", "spherical", "sphere", 73.0, "wood"),
    ("tennis_ball", "spherical", "sphere", 66.0, "styrofoam"),
    ("racquetball", "spherical", "sphere", 56.0, "styrofoam"),
    ("golf_ball", "spherical", "sphere", 43.0, "plastic"),
    ("strawberry", "spherical", "sphere", 45.0, "plastic"),
    ("screw", "cylindrical", "cylinder", 12.0, "metal"),
    ("spoon", "cylindrical", "cylinder", 34.0, "metal"),
    ("glasses_case", "cylindrical", "cylinder", 58.0, "plastic"),
    ("marker", "cylindrical", "cylinder", 17.0, "plastic"),
    ("screwdriver", "cylindrical", "cylinder", 26.0, "metal"),
    ("banana", "cylindrical", "cylinder", 40.0, "plastic"),
    ("foam_brick", "other", "block", 52.0, "styrofoam"),
    ("spam_can", "other", "can", 60.0, "metal"),
    ("padlock", "other", "lock", 42.0, "metal"),
    ("rubiks_cube", "other", "cube", 57.0, "plastic"),
)

SCENARIO_ALIASES = {
    "sizes-16-cubes": "sizes",
    "orientation-19-angles": "orientation",
    "materials-spheres": "materials_spheres",
    "materials-plates": "materials_plates",
    "materials-spheres-small": "materials_spheres_small",
    "ycb-16": "ycb16",
    "media-energy": "media_energy",
}
SCENARIOS = ("sizes", "orientation", "materials_spheres", "materials_plates",
             "materials_spheres_small", "ycb16", "media_energy")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    overrides: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str | None = None


@dataclass
class Scenario:
    name: str
    objects: list
    task: str
    poses_per_object: int = 20
    samples_per_pose: int = 2
    jitter_strength: float = 1.0
    noise_level: float = AMBIENT_DBA
    media: tuple = ("plastic_bb",)
    heldout_classes: tuple = ()
    categories: dict = field(default_factory=dict)
    # the orientation grid is set relative to the gripper, so z-rotation would corrupt the label
    rotation_jitter: bool = True

    @property
    def class_names(self):
        return [o.name for o in self.objects]


def canonical_scenario(name: str) -> str:
    name = SCENARIO_ALIASES.get(name, name)
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return name


SCENARIO_KEYS = {"poses_per_object", "samples_per_pose", "jitter_strength", "noise_level",
                 "sphere_diameter_mm", "plate_size_mm"}


def build_scenario(name: str, overrides: dict | None = None) -> Scenario:
    name = canonical_scenario(name)
    ov = dict(overrides or {})
    unknown = set(ov) - SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario override(s) {sorted(unknown)}; allowed: {sorted(SCENARIO_KEYS)}")

    if name == "sizes":
        objects = [ObjectState(s, "plastic", 0.0, i, "cube", f"cube_{s:.2f}mm")
                   for i, s in enumerate(CUBE_SIZES)]
        heldout = tuple(i for i, s in enumerate(CUBE_SIZES) if s in HELDOUT_SIZES)
        sc = Scenario(name, objects, "regress-size", poses_per_object=10, jitter_strength=0.3,
                      heldout_classes=heldout)
    elif name == "orientation":
        objects = [ObjectState(44.0, "wood", th, i, "bar", f"bar_{th:.0f}deg")
                   for i, th in enumerate(ORIENTATION_ANGLES)]
        heldout = tuple(i for i, th in enumerate(ORIENTATION_ANGLES) if th in HELDOUT_ANGLES)
        sc = Scenario(name, objects, "regress-theta", poses_per_object=10, jitter_strength=0.3,
                      heldout_classes=heldout, rotation_jitter=False)
    elif name in ("materials_spheres", "materials_spheres_small"):
        default = 80.0 if name == "materials_spheres" else 30.0
        d = float(ov.pop("sphere_diameter_mm", default))
        objects = [ObjectState(d, m, 0.0, i, "sphere", f"{m}_sphere_{d:.0f}mm")
                   for i, m in enumerate(MATERIALS)]
        sc = Scenario(name, objects, "classify", jitter_strength=1.0)
    elif name == "materials_plates":
        w = float(ov.pop("plate_size_mm", 120.0))
        objects = [ObjectState(w, m, 0.0, i, "plate", f"{m}_plate") for i, m in enumerate(MATERIALS)]
        sc = Scenario(name, objects, "classify", jitter_strength=1.0)
    elif name == "ycb16":
        objects = [ObjectState(size, mat, 0.0, i, shape, nm)
                   for i, (nm, cat, shape, size, mat) in enumerate(YCB16)]
        cats = {i: cat for i, (_, cat, *_rest) in enumerate(YCB16)}
        # strong pose variation: placement, not object identity, dominates raw spectra
        sc = Scenario(name, objects, "classify", jitter_strength=8.0, categories=cats)
    else:  # media_energy
        objects = [ObjectState(20.0, "plastic", 0.0, 0, "cube", "cube_20mm")]
        sc = Scenario(name, objects, "energy", poses_per_object=1, samples_per_pose=1,
                      jitter_strength=0.0, media=MEDIA)
    for key in ("poses_per_object", "samples_per_pose"):
        if key in ov:
            setattr(sc, key, int(ov.pop(key)))
    for key in ("jitter_strength", "noise_level"):
        if key in ov:
            setattr(sc, key, float(ov.pop(key)))
    if ov:
        raise ConfigError(f"override(s) {sorted(ov)} do not apply to scenario {name!r}")
    if sc.poses_per_object < 1 or sc.samples_per_pose < 1:
        raise ConfigError("poses_per_object and samples_per_pose must be >= 1")
    return sc


# ---------------------------------------------------------------------------
# Datasets

LABEL_COLUMNS = ("sample_id", "object_class", "size_mm", "material", "theta_deg", "pose_id", "noise_level",
                 "medium", "category", "object_name", "z_rotation", "translation_x", "translation_y",
                 "jitter_seed", "sample_seed")
_INT_COLUMNS = {"sample_id", "object_class", "pose_id", "jitter_seed", "sample_seed"}
_STR_COLUMNS = {"material", "medium", "category", "object_name"}


def pose_seed(master_seed: int, object_class: int, pose_id: int) -> int:
    """Seed for the placement of one object in one pose."""
    return int(np.random.SeedSequence([master_seed, object_class, pose_id]).generate_state(1)[0])


def sample_seed(master_seed: int, object_class: int, pose_id: int, sample_index: int) -> int:
    """Seed for the measurement noise of one recording."""
    return int(np.random.SeedSequence([master_seed, object_class, pose_id, sample_index, 1]).generate_state(1)[0])


def draw_jitter(master_seed: int, object_class: int, pose_id: int, strength: float,
                rotation: bool = True) -> PoseJitter:
    seed = pose_seed(master_seed, object_class, pose_id)
    if strength == 0:
        return PoseJitter(pose_id=pose_id, seed=seed)
    u = np.random.default_rng(seed).uniform(-1, 1, 3)
    s = min(strength, 1.0)
    z = 90.0 * s * u[0] if rotation else 0.0
    return PoseJitter(z, s * u[1], s * u[2], pose_id, strength, seed)


@dataclass(eq=False)
class Dataset:
    scenario: str
    seed: int
    recordings: np.ndarray
    labels: dict
    sample_rate: int = SAMPLE_RATE
    class_names: list = field(default_factory=list)
    heldout_classes: tuple = ()
    categories: dict = field(default_factory=dict)
    task: str = "classify"
    overrides: dict = field(default_factory=dict)
    gripper: GripperConfig = field(default_factory=GripperConfig)

    def __len__(self):
        return len(self.recordings)

    def __getitem__(self, key):
        return self.labels[key]

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, recordings=self.recordings[idx],
                       labels={k: v[idx] for k, v in self.labels.items()})

    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "overrides": self.overrides,
            "task": self.task,
            "n_samples": len(self),
            "samples_per_recording": int(self.recordings.shape[1]),
            "sample_rate": self.sample_rate,
            "dtype": "<f4",
            "samples_file": "samples.f32",
            "labels_file": "labels.csv",
            "label_columns": list(LABEL_COLUMNS),
            "class_names": list(self.class_names),
            "heldout_classes": [int(c) for c in self.heldout_classes],
            "categories": {str(k): v for k, v in sorted(self.categories.items())},
            "gripper": self.gripper.to_dict(),
            "gripper_config_hash": self.gripper.config_hash(),
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(self.recordings, dtype="<f4").tofile(directory / "samples.f32")
        with open(directory / "labels.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(LABEL_COLUMNS)
            for i in range(len(self)):
                w.writerow([_fmt(self.labels[c][i]) for c in LABEL_COLUMNS])
        (directory / "manifest.json").write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        path = directory / "manifest.json"
        if not path.exists():
            raise ConfigError(f"{directory} is not a dataset directory (no manifest.json)")
        manifest = json.loads(path.read_text())
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{directory}: unsupported schema version {manifest.get('schema_version')}")
        n, length = manifest["n_samples"], manifest["samples_per_recording"]
        rec = np.fromfile(directory / manifest["samples_file"], dtype="<f4")
        if rec.size != n * length:
            raise ConfigError(f"{directory}: samples blob holds {rec.size} floats, expected {n * length}")
        with open(directory / manifest["labels_file"], newline="") as f:
            rows = list(csv.DictReader(f))
        labels = {}
        for c in LABEL_COLUMNS:
            vals = [r[c] for r in rows]
            if c in _INT_COLUMNS:
                labels[c] = np.array([int(v) for v in vals], dtype=np.int64)
            elif c in _STR_COLUMNS:
                labels[c] = np.array(vals, dtype=object)
            else:
                labels[c] = np.array([float(v) for v in vals])
        return cls(manifest["scenario"], manifest["seed"], rec.reshape(n, length), labels,
                   manifest["sample_rate"], manifest["class_names"], tuple(manifest["heldout_classes"]),
                   {int(k): v for k, v in manifest["categories"].items()}, manifest["task"],
                   manifest["overrides"], GripperConfig.from_dict(manifest["gripper"]))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def generate_dataset(experiment: ExperimentSpec | str, seed: int | None = None,
                     config: GripperConfig | None = None, sweep: SweepSpec = SweepSpec()) -> Dataset:
    if isinstance(experiment, str):
        experiment = ExperimentSpec(experiment)
    seed = experiment.seed if seed is None else seed
    sc = build_scenario(experiment.scenario, experiment.overrides)
    base = config or GripperConfig()
    excitation = generate_log_sweep(sweep)

    rows = {c: [] for c in LABEL_COLUMNS}
    recordings = []
    for medium in sc.media:
        cfg = replace(base, medium=medium)
        for obj in sc.objects:
            for pose in range(sc.poses_per_object):
                jitter = draw_jitter(seed, obj.object_class, pose, sc.jitter_strength, sc.rotation_jitter)
                clean = clean_recording(excitation, obj, jitter, cfg)
                for k in range(sc.samples_per_pose):
                    s_seed = sample_seed(seed, obj.object_class, pose, k)
                    rec = add_noise(AudioClip(clean), effective_noise_level(sc.noise_level, cfg), s_seed,
                                    cfg.floor_sigma)
                    recordings.append(rec.samples.astype(np.float32))
                    values = (len(recordings) - 1, obj.object_class, obj.size, obj.material,
                              obj.orientation_theta, pose, sc.noise_level, medium,
                              sc.categories.get(obj.object_class, ""), obj.name, jitter.z_rotation,
                              jitter.translation_x, jitter.translation_y, jitter.seed, s_seed)
                    for c, v in zip(LABEL_COLUMNS, values):
                        rows[c].append(v)
    labels = {}
    for c in LABEL_COLUMNS:
        if c in _INT_COLUMNS:
            labels[c] = np.array(rows[c], dtype=np.int64)
        elif c in _STR_COLUMNS:
            labels[c] = np.array(rows[c], dtype=object)
        else:
            labels[c] = np.array(rows[c], dtype=float)
    return Dataset(sc.name, seed, np.stack(recordings), labels, excitation.sample_rate, sc.class_names,
                   sc.heldout_classes, sc.categories, sc.task, dict(experiment.overrides), base)


def object_for_row(dataset: Dataset, i: int) -> ObjectState:
    lab = dataset.labels
    name = str(lab["object_name"][i])
    cls_ = int(lab["object_class"][i])
    sc = build_scenario(dataset.scenario, dataset.overrides)
    obj = sc.objects[cls_]
    if obj.name != name:
        raise ConfigError(f"dataset row {i} does not match scenario object {obj.name!r}")
    return obj


def rerender(dataset: Dataset, indices, noise_level: float, sweep: SweepSpec = SweepSpec()) -> np.ndarray:
    """Re-simulate the given rows with the same poses and noise seeds at another noise level."""
    excitation = generate_log_sweep(sweep)
    lab = dataset.labels
    sc = build_scenario(dataset.scenario, dataset.overrides)
    out = []
    for i in indices:
        obj = object_for_row(dataset, i)
        jitter = PoseJitter(float(lab["z_rotation"][i]), float(lab["translation_x"][i]),
                            float(lab["translation_y"][i]), int(lab["pose_id"][i]), sc.jitter_strength,
                            int(lab["jitter_seed"][i]))
        cfg = replace(dataset.gripper, medium=str(lab["medium"][i]))
        clean = clean_recording(excitation, obj, jitter, cfg)
        rec = add_noise(AudioClip(clean), effective_noise_level(noise_level, cfg), int(lab["sample_seed"][i]),
                        cfg.floor_sigma)
        out.append(rec.samples.astype(np.float32))
    return np.stack(out)
