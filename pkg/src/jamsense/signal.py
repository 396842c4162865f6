"""Excitation sweeps, calibrated noise, energy metrics and WAV I/O."""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateReferenceError, ParameterError

SAMPLE_RATE = 44100
AMBIENT_DBA = 45.0
# Noise std at the ambient floor; +20 dB scales the std by 10.
AMBIENT_SIGMA = 0.001


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ParameterError("clip needs a non-empty 1-D sample array")
        if self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("clip contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def scaled(self, factor: float) -> "AudioClip":
        return AudioClip(self.samples * factor, self.sample_rate)


@dataclass(frozen=True)
class SweepSpec:
    duration: float = 1.0
    f_start: float = 20.0
    f_end: float = 20000.0
    amplitude: float = 0.8

    def validate(self, sample_rate: int) -> None:
        if self.duration <= 0:
            raise ParameterError(f"sweep duration must be positive, got {self.duration}")
        if not 0 < self.f_start <= self.f_end:
            raise ParameterError(f"need 0 < f_start <= f_end, got {self.f_start}, {self.f_end}")
        if self.f_end >= sample_rate / 2:
            raise ParameterError(f"f_end {self.f_end} Hz is at or above Nyquist for {sample_rate} Hz")
        if not 0 < self.amplitude <= 1:
            raise ParameterError(f"amplitude must be in (0, 1], got {self.amplitude}")


def sweep_phase(spec: SweepSpec, t: np.ndarray) -> np.ndarray:
    """Phase of an exponential chirp, zero at t=0."""
    if spec.f_end == spec.f_start:
        return 2 * np.pi * spec.f_start * t
    log_ratio = np.log(spec.f_end / spec.f_start)
    return 2 * np.pi * spec.f_start * spec.duration / log_ratio * np.expm1(t / spec.duration * log_ratio)


def instantaneous_frequency(spec: SweepSpec, t):
    return spec.f_start * (spec.f_end / spec.f_start) ** (np.asarray(t) / spec.duration)


def generate_log_sweep(spec: SweepSpec = SweepSpec(), sample_rate: int = SAMPLE_RATE) -> AudioClip:
    spec.validate(sample_rate)
    n = int(round(spec.duration * sample_rate))
    t = np.arange(n) / sample_rate
    return AudioClip(spec.amplitude * np.sin(sweep_phase(spec, t)), sample_rate)


def noise_sigma(noise_level: float, floor_sigma: float = AMBIENT_SIGMA) -> float:
    if noise_level < AMBIENT_DBA:
        raise ParameterError(f"noise level {noise_level} dBA is below the {AMBIENT_DBA} dBA floor")
    if floor_sigma < 0:
        raise ParameterError("floor_sigma must be non-negative")
    return floor_sigma * 10.0 ** ((noise_level - AMBIENT_DBA) / 20.0)


def add_noise(clip: AudioClip, noise_level: float = AMBIENT_DBA, seed: int = 0,
              floor_sigma: float = AMBIENT_SIGMA) -> AudioClip:
    """Add white Gaussian noise whose std follows the relative dBA scale."""
    sigma = noise_sigma(noise_level, floor_sigma)
    if sigma == 0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    rng = np.random.default_rng(seed)
    return AudioClip(clip.samples + sigma * rng.standard_normal(len(clip)), clip.sample_rate)


def signal_energy(clip: AudioClip) -> float:
    x = clip.samples
    return float(np.dot(x, x))


def relative_reflected_energy(clip: AudioClip, reference: AudioClip) -> float:
    ref = signal_energy(reference)
    if ref == 0:
        raise DegenerateReferenceError("reference clip has zero energy")
    return signal_energy(clip) / ref


def write_wav(path, clip: AudioClip) -> None:
    """16-bit PCM mono. Samples outside [-1, 1] are clipped."""
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(clip.sample_rate))
        f.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise ParameterError(f"{path}: only 16-bit PCM is supported")
        channels = f.getnchannels()
        rate = f.getframerate()
        raw = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    if channels > 1:
        raw = raw.reshape(-1, channels)[:, 0]
    return AudioClip(raw.astype(np.float64) / 32767, rate)
