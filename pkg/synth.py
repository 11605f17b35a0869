"""
Synthetic desk-scale sensor data.

Each mode has a generative signature: body oscillation (walk, run, bike),
low-frequency vehicle drift, a magnetic field strength and a noise floor.
Every frame gets a random device orientation that is applied to all three
sensors, so per-axis readings depend on how the phone is held while
magnitudes do not. Train and Subway share one profile and differ only in
their noise floor; they are meant to be hard to tell apart.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
from scipy.spatial.transform import Rotation

from config import AXES, NATIVE_RATE_HZ, SYNTH_FRAME_SECONDS, SYNTH_FRAMES_PER_MODE
from errors import ConfigError
from ingest import Dataset, Mode, RawFrame

logger = logging.getLogger(__name__)

GRAVITY = 9.81
MOTION_TILT = np.deg2rad(60.0)
FIELD_INCLINATION = np.deg2rad(60.0)


@dataclass(frozen=True)
class ModeSignature:
    frequency_hz: float = 0.0     # body oscillation
    acc_amplitude: float = 0.0
    gyr_amplitude: float = 0.0
    drift_hz: float = 0.0         # vehicle acceleration/braking
    drift_amplitude: float = 0.0
    mag_field: float = 48.0       # field strength seen by the phone (uT)
    noise: float = 0.02           # accelerometer noise floor (m/s^2)


DEFAULT_SIGNATURES = {
    Mode.STILL: ModeSignature(noise=0.02),
    Mode.WALK: ModeSignature(frequency_hz=2.0, acc_amplitude=2.0, gyr_amplitude=0.8, noise=0.1),
    Mode.RUN: ModeSignature(frequency_hz=3.0, acc_amplitude=6.0, gyr_amplitude=2.0, noise=0.2),
    Mode.BIKE: ModeSignature(frequency_hz=1.2, acc_amplitude=1.5, gyr_amplitude=0.6, noise=0.1),
    Mode.CAR: ModeSignature(gyr_amplitude=0.05, drift_hz=0.2, drift_amplitude=0.6, mag_field=40.0, noise=0.05),
    Mode.BUS: ModeSignature(gyr_amplitude=0.05, drift_hz=0.15, drift_amplitude=0.8, mag_field=60.0, noise=0.05),
    Mode.TRAIN: ModeSignature(gyr_amplitude=0.02, drift_hz=0.08, drift_amplitude=0.3, mag_field=30.0, noise=0.03),
    Mode.SUBWAY: ModeSignature(gyr_amplitude=0.02, drift_hz=0.08, drift_amplitude=0.3, mag_field=30.0, noise=0.06),
}


@dataclass(frozen=True)
class SynthSpec:
    frames_per_mode: int = SYNTH_FRAMES_PER_MODE
    frame_seconds: float = SYNTH_FRAME_SECONDS
    sample_rate_hz: float = NATIVE_RATE_HZ
    transition_fraction: float = 0.0
    signatures: Mapping[int, ModeSignature] = field(default_factory=lambda: dict(DEFAULT_SIGNATURES))

    def __post_init__(self):
        if self.frames_per_mode < 1:
            raise ConfigError(f"frames_per_mode must be positive, got {self.frames_per_mode}")
        if not self.frame_seconds > 0 or not self.sample_rate_hz > 0:
            raise ConfigError("frame_seconds and sample_rate_hz must be positive")
        if self.frame_length < 2:
            raise ConfigError(f"A frame needs at least 2 samples, got {self.frame_length}")
        if not 0.0 <= self.transition_fraction <= 1.0:
            raise ConfigError(f"transition_fraction must lie in [0, 1], got {self.transition_fraction}")
        missing = [m.label for m in Mode if m not in {int(k) for k in self.signatures}]
        if missing:
            raise ConfigError(f"Synthetic spec has no signature for {', '.join(missing)}")

    @property
    def frame_length(self):
        return int(round(self.frame_seconds * self.sample_rate_hz))

    def signature(self, mode):
        for key, value in self.signatures.items():
            if int(key) == int(mode):
                return value
        raise ConfigError(f"No signature for mode {mode}")

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        signatures = dict(DEFAULT_SIGNATURES)
        for name, overrides in (data.pop("signatures", None) or {}).items():
            mode = Mode.from_name(name)
            signatures[mode] = ModeSignature(**{**asdict(signatures[mode]), **overrides})
        return cls(signatures=signatures, **data)

    def to_dict(self):
        return {
            "frames_per_mode": self.frames_per_mode,
            "frame_seconds": self.frame_seconds,
            "sample_rate_hz": self.sample_rate_hz,
            "transition_fraction": self.transition_fraction,
            "signatures": {Mode(int(k)).label: asdict(v) for k, v in sorted(self.signatures.items())},
        }


def _random_rotation(rng):
    quaternion = rng.normal(size=4)
    return Rotation.from_quat(quaternion / np.linalg.norm(quaternion))


def _mode_signals(signature, t, rng):
    """World-frame accelerometer, gyroscope and magnetometer signals, each [T, 3]."""
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    horizontal = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    motion_dir = np.sin(MOTION_TILT) * horizontal + np.array([0.0, 0.0, np.cos(MOTION_TILT)])

    acc = np.tile([0.0, 0.0, GRAVITY], (t.size, 1))
    if signature.acc_amplitude:
        f = signature.frequency_hz * (1.0 + 0.05 * rng.standard_normal())
        phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
        bounce = np.sin(2 * np.pi * f * t + phase[0]) + 0.5 * np.sin(4 * np.pi * f * t + phase[1])
        acc += signature.acc_amplitude * bounce[:, None] * motion_dir
    if signature.drift_amplitude:
        f = signature.drift_hz * (1.0 + 0.1 * rng.standard_normal())
        drift = signature.drift_amplitude * np.sin(2 * np.pi * f * t + rng.uniform(0.0, 2.0 * np.pi))
        acc += drift[:, None] * horizontal

    gyr = np.zeros((t.size, 3))
    if signature.gyr_amplitude:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        f = signature.frequency_hz or signature.drift_hz
        sway = signature.gyr_amplitude * np.sin(2 * np.pi * f * t + rng.uniform(0.0, 2.0 * np.pi))
        gyr += sway[:, None] * axis

    heading = rng.uniform(0.0, 2.0 * np.pi)
    field_dir = np.array([np.cos(FIELD_INCLINATION) * np.cos(heading),
                          np.cos(FIELD_INCLINATION) * np.sin(heading),
                          -np.sin(FIELD_INCLINATION)])
    mag = np.tile(signature.mag_field * field_dir, (t.size, 1))
    return acc, gyr, mag


def _render(signature, length, rate, rng):
    t = np.arange(length) / rate
    acc, gyr, mag = _mode_signals(signature, t, rng)
    rotation = _random_rotation(rng)
    noise = signature.noise
    return {
        "A": rotation.apply(acc) + rng.normal(0.0, noise, size=acc.shape),
        "G": rotation.apply(gyr) + rng.normal(0.0, 0.5 * noise, size=gyr.shape),
        "M": rotation.apply(mag) + rng.normal(0.0, 10.0 * noise, size=mag.shape),
    }


def _to_frame(signals, labels, rate):
    samples = {(sensor, axis): signals[sensor][:, i] for sensor in signals for i, axis in enumerate(AXES)}
    return RawFrame(samples, rate, labels)


def synth_generate(spec, seed, split_tag="train"):
    """Generate a labeled dataset; identical (spec, seed) pairs give identical data."""
    rng = np.random.default_rng(seed)
    length, rate = spec.frame_length, spec.sample_rate_hz
    modes = [mode for mode in Mode for _ in range(spec.frames_per_mode)]
    rendered = [_render(spec.signature(mode), length, rate, rng) for mode in modes]
    labels = [np.full(length, int(mode), dtype=np.int64) for mode in modes]

    n_mixed = int(round(spec.transition_fraction * len(modes)))
    for index in sorted(rng.choice(len(modes), size=n_mixed, replace=False)):
        first = modes[index]
        second = Mode(int(rng.choice([m for m in Mode if m != first])))
        cut = int(rng.integers(1, length))
        tail = _render(spec.signature(second), length, rate, rng)
        for sensor in rendered[index]:
            rendered[index][sensor][cut:] = tail[sensor][cut:]
        labels[index][cut:] = int(second)

    order = rng.permutation(len(modes))
    frames = [_to_frame(rendered[i], labels[i], rate) for i in order]
    logger.info(f"Generated {len(frames)} synthetic frames ({n_mixed} with transitions), seed {seed}")
    return Dataset(frames, split_tag)
