"""
Data-loader transforms: smoothing, downsampling, magnitude and jerk.

Channels are built per frame as smooth (native rate) -> downsample ->
magnitude / jerk. Array kernels work along axis 0 so they apply to a single
axis [T] or a stacked sensor [T, 3] alike.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import DEFAULT_CHANNELS, SENSORS, SMOOTHING_M
from errors import ConfigError, StructuralError
from ingest import majority_label

logger = logging.getLogger(__name__)

FEATURES = ("xyz", "mag", "jerk")
CHANNEL_NAMES = tuple(f"{sensor}_{feature}" for sensor in SENSORS for feature in FEATURES)
CHANNEL_WIDTHS = {"xyz": 3, "mag": 1, "jerk": 3}


@dataclass(frozen=True)
class Series:
    values: np.ndarray
    dt_s: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise StructuralError("A series needs at least one value")
        if not self.dt_s > 0:
            raise StructuralError(f"Sampling period must be positive, got {self.dt_s}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class TriAxis:
    x: Series
    y: Series
    z: Series

    def __post_init__(self):
        if not len(self.x) == len(self.y) == len(self.z):
            raise StructuralError("Axes of a tri-axis signal must have equal lengths")
        if not self.x.dt_s == self.y.dt_s == self.z.dt_s:
            raise StructuralError("Axes of a tri-axis signal must share one sampling period")

    @classmethod
    def from_array(cls, array, dt_s):
        return cls(*(Series(array[:, i], dt_s) for i in range(3)))

    def to_array(self):
        return np.stack([self.x.values, self.y.values, self.z.values], axis=1)

    @property
    def dt_s(self):
        return self.x.dt_s


# Array kernels

def smooth_array(values, m):
    """Central moving average with shrinking symmetric windows at both ends."""
    values = np.asarray(values, dtype=np.float64)
    length = values.shape[0]
    if m < 1 or m % 2 == 0:
        raise ConfigError(f"Smoothing window must be odd and positive, got {m}")
    if m > length:
        raise ConfigError(f"Smoothing window {m} exceeds series length {length}")
    half = m // 2
    out = np.empty_like(values)
    # sliding_window_view puts the window on the last axis
    out[half:length - half] = sliding_window_view(values, m, axis=0).mean(axis=-1)
    for i in range(half):
        out[i] = values[:2 * i + 1].mean(axis=0)
        out[length - 1 - i] = values[length - 1 - 2 * i:].mean(axis=0)
    return out


def downsample_array(values, factor):
    values = np.asarray(values, dtype=np.float64)
    if factor < 1 or int(factor) != factor:
        raise ConfigError(f"Downsampling size must be a positive integer, got {factor}")
    factor = int(factor)
    if factor > values.shape[0]:
        raise ConfigError(f"Downsampling size {factor} exceeds series length {values.shape[0]}")
    n = values.shape[0] // factor
    return values[:n * factor].reshape((n, factor) + values.shape[1:]).mean(axis=1)


def magnitude_array(xyz):
    xyz = np.asarray(xyz, dtype=np.float64)
    return np.sqrt(np.sum(xyz * xyz, axis=-1))


def jerk_array(values, dt_s):
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise StructuralError("Jerk needs at least two samples")
    diff = np.diff(values, axis=0) / dt_s
    return np.concatenate([diff, diff[-1:]], axis=0)


# Series operations

def smooth(s, m):
    return Series(smooth_array(s.values, m), s.dt_s)


def downsample(s, S):
    return Series(downsample_array(s.values, S), s.dt_s * S)


def magnitude(t):
    return Series(magnitude_array(t.to_array()), t.dt_s)


def jerk(t):
    return TriAxis.from_array(jerk_array(t.to_array(), t.dt_s), t.dt_s)


@dataclass(frozen=True)
class FeatureConfig:
    """Selected channels (in network order) plus smoothing and downsampling sizes."""
    channels: Sequence[str] = DEFAULT_CHANNELS
    smoothing_m: int = SMOOTHING_M
    downsample_S: int = 5

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise ConfigError("At least one feature channel must be selected")
        unknown = [c for c in channels if c not in CHANNEL_NAMES]
        if unknown:
            raise ConfigError(f"Unknown channels {unknown}; expected names from {CHANNEL_NAMES}")
        if len(set(channels)) != len(channels):
            raise ConfigError(f"Duplicate channels in {channels}")
        if self.smoothing_m < 1 or self.smoothing_m % 2 == 0:
            raise ConfigError(f"smoothing_m must be odd and positive, got {self.smoothing_m}")
        if self.downsample_S < 1 or int(self.downsample_S) != self.downsample_S:
            raise ConfigError(f"downsample_S must be a positive integer, got {self.downsample_S}")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "downsample_S", int(self.downsample_S))

    @classmethod
    def from_flags(cls, flags, smoothing_m=SMOOTHING_M, downsample_S=5):
        """Build from {sensor: {"xyz": bool, "mag": bool, "jerk": bool}} in canonical order."""
        channels = [f"{sensor}_{feature}" for sensor in SENSORS for feature in FEATURES
                    if flags.get(sensor, {}).get(feature)]
        return cls(channels, smoothing_m, downsample_S)

    def flags(self):
        return {sensor: {feature: f"{sensor}_{feature}" in self.channels for feature in FEATURES}
                for sensor in SENSORS}

    @property
    def widths(self):
        return tuple(CHANNEL_WIDTHS[name.split("_")[1]] for name in self.channels)

    @property
    def sensors(self):
        return tuple(s for s in SENSORS if any(c.startswith(f"{s}_") for c in self.channels))

    def to_dict(self):
        return {"channels": list(self.channels), "smoothing_m": self.smoothing_m,
                "downsample_S": self.downsample_S}


def _feature_config(*channels):
    return FeatureConfig(channels=channels)


# Default channel set: A-jerk, A-magnitude, M-jerk, G-xyz, G-magnitude
DEFAULT_FEATURES = FeatureConfig()

SINGLE_SENSOR_FEATURES = {
    f"{sensor}_{feature}": _feature_config(f"{sensor}_{feature}")
    for sensor in SENSORS for feature in FEATURES
}

MULTI_SENSOR_FEATURES = {
    "1": _feature_config("A_jerk", "A_mag"),
    "2": _feature_config("G_xyz", "G_mag"),
    "3": _feature_config("A_jerk", "A_mag", "G_xyz", "G_mag"),
    "4": _feature_config("A_jerk", "A_mag", "M_jerk"),
    "5": _feature_config("M_jerk", "G_xyz", "G_mag"),
    "6": DEFAULT_FEATURES,
}


@dataclass(frozen=True)
class ChannelSet:
    channels: Sequence[tuple]
    frame_label: Optional[int] = None

    def __post_init__(self):
        channels = tuple((name, np.asarray(values)) for name, values in self.channels)
        lengths = {values.shape[0] for _, values in channels}
        if len(lengths) != 1:
            raise StructuralError(f"Channels have unequal lengths {sorted(lengths)}")
        for name, values in channels:
            if values.ndim != 2 or values.shape[1] not in (1, 3):
                raise StructuralError(f"Channel {name} must have width 1 or 3, got shape {values.shape}")
        object.__setattr__(self, "channels", channels)

    @property
    def names(self):
        return tuple(name for name, _ in self.channels)

    @property
    def length(self):
        return self.channels[0][1].shape[0]


def build_channels(frame, cfg):
    """Turn one raw frame into the model's input channels."""
    dt_s = cfg.downsample_S / frame.sample_rate_hz
    prepared = {}
    for sensor in cfg.sensors:
        smoothed = smooth_array(frame.tri_axis(sensor), cfg.smoothing_m)
        prepared[sensor] = downsample_array(smoothed, cfg.downsample_S)

    channels = []
    for name in cfg.channels:
        sensor, feature = name.split("_")
        xyz = prepared[sensor]
        if feature == "xyz":
            values = xyz
        elif feature == "mag":
            values = magnitude_array(xyz)[:, None]
        else:
            values = jerk_array(xyz, dt_s)
        channels.append((name, values))
    label = None if frame.labels is None else majority_label(frame.labels)
    return ChannelSet(channels, label)


@dataclass
class ChannelStack:
    """A batch of ChannelSets as per-channel arrays of shape [N, L, width]."""
    names: Sequence[str]
    arrays: list
    labels: Optional[np.ndarray] = None
    sample_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return self.arrays[0].shape[0] if self.arrays else 0

    @property
    def length(self):
        return self.arrays[0].shape[1]

    @property
    def widths(self):
        return tuple(a.shape[2] for a in self.arrays)

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return ChannelStack(
            self.names, [a[indices] for a in self.arrays],
            None if self.labels is None else self.labels[indices],
            None if self.sample_labels is None else self.sample_labels[indices])


def stack_channel_sets(sets, sample_labels=None):
    if not sets:
        raise StructuralError("Cannot stack an empty list of channel sets")
    names = sets[0].names
    for index, channel_set in enumerate(sets):
        if channel_set.names != names:
            raise StructuralError(f"Channel set {index} has channels {channel_set.names}, expected {names}")
    arrays = [np.stack([s.channels[i][1] for s in sets]) for i in range(len(names))]
    labels = None
    if all(s.frame_label is not None for s in sets):
        labels = np.array([s.frame_label for s in sets], dtype=np.int64)
    return ChannelStack(names, arrays, labels, sample_labels)


def build_channel_stack(ds, cfg):
    """Build channels for every frame of a dataset."""
    sets = [build_channels(frame, cfg) for frame in ds.frames]
    sample_labels = np.stack([f.labels for f in ds.frames]) if ds.labeled else None
    logger.info(f"Built {len(sets)} channel sets ({', '.join(cfg.channels)}) of length {sets[0].length}")
    return stack_channel_sets(sets, sample_labels)
