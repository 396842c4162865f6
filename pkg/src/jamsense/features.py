"""Time-summed STFT magnitude features."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InputTooShortError, ParameterError
from .signal import AudioClip

WINDOWS = ("hann", "rectangular")
NORMALIZATIONS = ("l2", "max", "sum")


@dataclass(frozen=True)
class FeatureConfig:
    window_size: int = 2048
    hop_size: int = 1024
    window_function: str = "hann"
    normalization: str = "l2"

    def __post_init__(self):
        if self.window_size <= 0 or self.window_size & (self.window_size - 1):
            raise ParameterError(f"window_size must be a power of two, got {self.window_size}")
        if not 0 < self.hop_size <= self.window_size:
            raise ParameterError(f"hop_size must be in (0, window_size], got {self.hop_size}")
        if self.window_function not in WINDOWS:
            raise ParameterError(f"unknown window {self.window_function!r}; choose from {WINDOWS}")
        if self.normalization not in NORMALIZATIONS:
            raise ParameterError(f"unknown normalization {self.normalization!r}; choose from {NORMALIZATIONS}")

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    norm: str = "l2"
    degenerate: bool = False

    def __len__(self):
        return self.values.size


def window(config: FeatureConfig) -> np.ndarray:
    if config.window_function == "rectangular":
        return np.ones(config.window_size)
    # periodic Hann
    n = np.arange(config.window_size)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / config.window_size)


def frame_count(n_samples: int, config: FeatureConfig) -> int:
    return (n_samples - config.window_size) // config.hop_size + 1


def stft_magnitudes(clip: AudioClip | np.ndarray, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Magnitude spectrogram, shape (frames, window_size // 2 + 1)."""
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if x.size < config.window_size:
        raise InputTooShortError(f"clip has {x.size} samples, fewer than one {config.window_size}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, config.window_size)[::config.hop_size]
    return np.abs(np.fft.rfft(frames * window(config), axis=-1))


def normalize(values: np.ndarray, kind: str) -> tuple[np.ndarray, bool]:
    if kind == "l2":
        scale = np.sqrt(np.dot(values, values))
    elif kind == "max":
        scale = values.max()
    elif kind == "sum":
        scale = values.sum()
    else:
        raise ParameterError(f"unknown normalization {kind!r}")
    if scale == 0:
        return np.zeros_like(values), True
    return values / scale, False


def features_from_clip(clip: AudioClip | np.ndarray, config: FeatureConfig = FeatureConfig()) -> FeatureVector:
    summed = stft_magnitudes(clip, config).sum(axis=0)
    values, degenerate = normalize(summed, config.normalization)
    return FeatureVector(values, config.normalization, degenerate)


def extract_features(recordings: np.ndarray, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Feature matrix (n, n_bins) for a stack of recordings, in input order."""
    out = np.empty((len(recordings), config.n_bins))
    for i, rec in enumerate(recordings):
        out[i] = features_from_clip(np.asarray(rec, dtype=np.float64), config).values
    return out


def save_feature_cache(directory, features: np.ndarray, sample_ids, config: FeatureConfig) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(features, dtype="<f4").tofile(directory / "features.f32")
    index = {
        "config": asdict(config),
        "config_hash": config.config_hash(),
        "n_bins": config.n_bins,
        "sample_ids": [int(s) for s in sample_ids],
    }
    (directory / "features.json").write_text(json.dumps(index, indent=1, sort_keys=True))


def load_feature_cache(directory, config: FeatureConfig):
    """Return (features, sample_ids), or None when missing or built with another config."""
    directory = Path(directory)
    index_path = directory / "features.json"
    if not index_path.exists():
        return None
    index = json.loads(index_path.read_text())
    if index.get("config_hash") != config.config_hash():
        return None
    ids = index["sample_ids"]
    feats = np.fromfile(directory / "features.f32", dtype="<f4").reshape(len(ids), index["n_bins"])
    return feats.astype(np.float64), ids
