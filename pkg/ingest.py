"""
Loading and framing of SHL-format inertial sensor data.

An SHL challenge directory holds one text file per sensor axis plus a label
file. Every line is one frame; values are whitespace separated. Frames are
kept as read-only numpy arrays so datasets can be shared between threads.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from config import (
    AXES,
    MODE_NAMES,
    NATIVE_RATE_HZ,
    SENSORS,
    SHL_FILE_NAMES,
    SHL_LABEL_FILE,
    SHL_LOAD_WORKERS,
)
from errors import ConfigError, ParseError, StructuralError

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "sub-train", "sub-validation", "test")


class Mode(IntEnum):
    """The eight transportation modes, ids 1..8 in SHL order."""
    STILL = 1
    WALK = 2
    RUN = 3
    BIKE = 4
    CAR = 5
    BUS = 6
    TRAIN = 7
    SUBWAY = 8

    @property
    def label(self):
        return MODE_NAMES[self.value - 1]

    @classmethod
    def from_name(cls, name):
        try:
            return cls(MODE_NAMES.index(name) + 1)
        except ValueError:
            raise ConfigError(f"Unknown mode name {name!r}; expected one of {', '.join(MODE_NAMES)}")


def _frozen(values, dtype=np.float64):
    array = np.asarray(values, dtype=dtype).view()
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class RawFrame:
    """One fixed-length window of multi-axis samples with per-sample labels."""
    samples: Mapping[tuple, np.ndarray]
    sample_rate_hz: float = NATIVE_RATE_HZ
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.samples:
            raise StructuralError("A frame needs at least one sensor axis")
        if not self.sample_rate_hz > 0:
            raise StructuralError(f"Sample rate must be positive, got {self.sample_rate_hz}")
        frozen = {}
        length = None
        for key, values in self.samples.items():
            sensor, axis = key
            if sensor not in SENSORS or axis not in AXES:
                raise StructuralError(f"Unknown sensor axis {key!r}")
            array = _frozen(values)
            if array.ndim != 1:
                raise StructuralError(f"Sensor axis {sensor}_{axis} must be one-dimensional")
            if length is None:
                length = array.shape[0]
            elif array.shape[0] != length:
                raise StructuralError(
                    f"Sensor axis {sensor}_{axis} has {array.shape[0]} samples, expected {length}")
            frozen[(sensor, axis)] = array
        object.__setattr__(self, "samples", frozen)
        if self.labels is not None:
            labels = _frozen(self.labels, dtype=np.int64)
            if labels.shape != (length,):
                raise StructuralError(f"Frame has {labels.shape[0]} labels for {length} samples")
            if labels.size and (labels.min() < 1 or labels.max() > len(Mode)):
                raise StructuralError(f"Mode ids must lie in 1..{len(Mode)}")
            object.__setattr__(self, "labels", labels)

    @property
    def length(self):
        return next(iter(self.samples.values())).shape[0]

    @property
    def duration_s(self):
        return self.length / self.sample_rate_hz

    @property
    def sensors(self):
        return tuple(s for s in SENSORS if all((s, a) in self.samples for a in AXES))

    def tri_axis(self, sensor):
        """Return the sensor's axes stacked as an array of shape [T, 3]."""
        try:
            return np.stack([self.samples[(sensor, axis)] for axis in AXES], axis=1)
        except KeyError:
            raise StructuralError(f"Frame has no complete {sensor} sensor")

    def window(self, start, stop):
        labels = None if self.labels is None else self.labels[start:stop]
        return RawFrame({key: values[start:stop] for key, values in self.samples.items()},
                        self.sample_rate_hz, labels)


@dataclass(frozen=True)
class Dataset:
    frames: Sequence[RawFrame]
    split_tag: str = "train"

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ConfigError(f"Unknown split tag {self.split_tag!r}; expected one of {SPLIT_TAGS}")
        frames = tuple(self.frames)
        if frames:
            rate, length = frames[0].sample_rate_hz, frames[0].length
            for index, frame in enumerate(frames):
                if frame.sample_rate_hz != rate or frame.length != length:
                    raise StructuralError(
                        f"Frame {index} is {frame.length} samples at {frame.sample_rate_hz} Hz, "
                        f"expected {length} samples at {rate} Hz")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def sample_rate_hz(self):
        return self.frames[0].sample_rate_hz if self.frames else None

    @property
    def frame_length(self):
        return self.frames[0].length if self.frames else None

    @property
    def labeled(self):
        return bool(self.frames) and all(f.labels is not None for f in self.frames)

    def frame_labels(self):
        """Majority label of every frame."""
        return np.array([majority_label(f.labels) for f in self.frames], dtype=np.int64)

    def class_counts(self):
        labels = self.frame_labels()
        return {int(mode): int(np.sum(labels == mode)) for mode in Mode}

    def subset(self, indices, split_tag=None):
        return Dataset([self.frames[i] for i in indices], split_tag or self.split_tag)


@dataclass(frozen=True)
class ShlManifest:
    """File names of an SHL directory; defaults follow the challenge release."""
    files: Mapping[str, Mapping[str, str]] = field(default_factory=lambda: SHL_FILE_NAMES)
    label_file: str = SHL_LABEL_FILE

    @classmethod
    def from_dict(cls, data):
        if not data:
            return cls()
        return cls(files=data.get("files", SHL_FILE_NAMES), label_file=data.get("label_file", SHL_LABEL_FILE))

    def axis_files(self):
        return [((sensor, axis), name) for sensor, axes in self.files.items() for axis, name in axes.items()]


def _read_matrix(path, integer=False):
    """Read one SHL text file into an array of shape [frames, samples]."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    for line_no, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            raise StructuralError(f"{path}:{line_no}: empty line inside the file")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise StructuralError(f"{path}:{line_no}: {len(tokens)} values, expected {width}")
        try:
            rows.append(np.array(tokens, dtype=np.float64))
        except ValueError:
            for column, token in enumerate(tokens, start=1):
                try:
                    float(token)
                except ValueError:
                    raise ParseError(path, line_no, column, token)
    if not rows:
        raise StructuralError(f"{path}: file holds no frames")
    matrix = np.vstack(rows)
    if integer:
        if not np.all(np.isfinite(matrix)) or np.any(matrix != np.round(matrix)):
            raise StructuralError(f"{path}: labels must be integer mode ids")
        matrix = matrix.astype(np.int64)
        bad = np.argwhere((matrix < 1) | (matrix > len(Mode)))
        if bad.size:
            line_no, column = bad[0] + 1
            raise StructuralError(
                f"{path}:{line_no}:{column}: mode id {matrix[bad[0][0], bad[0][1]]} outside 1..{len(Mode)}")
    return matrix


def load_shl(dir_path, split_tag="train", sample_rate_hz=NATIVE_RATE_HZ, manifest=None, require_labels=None):
    """Load an SHL challenge directory into a Dataset."""
    directory = Path(dir_path)
    manifest = manifest or ShlManifest()
    if require_labels is None:
        require_labels = split_tag != "test"
    if not directory.is_dir():
        raise StructuralError(f"{directory} is not a directory")
    if not any(directory.iterdir()):
        raise StructuralError(f"{directory} is empty")

    wanted = manifest.axis_files()
    missing = [name for _, name in wanted if not (directory / name).is_file()]
    if missing:
        raise StructuralError(f"{directory} is missing sensor files: {', '.join(missing)}")
    label_path = directory / manifest.label_file
    if not label_path.is_file():
        if require_labels:
            raise StructuralError(f"{directory} has no label file {manifest.label_file}")
        label_path = None

    logger.info(f"Loading {len(wanted)} sensor files from {directory}")
    with ThreadPoolExecutor(max_workers=SHL_LOAD_WORKERS) as pool:
        futures = {key: pool.submit(_read_matrix, directory / name) for key, name in wanted}
        label_future = pool.submit(_read_matrix, label_path, True) if label_path else None
        matrices = {key: future.result() for key, future in futures.items()}
        labels = label_future.result() if label_future else None

    (ref_key, ref_name), shape = wanted[0], matrices[wanted[0][0]].shape
    checks = [(name, matrices[key].shape) for key, name in wanted]
    if labels is not None:
        checks.append((manifest.label_file, labels.shape))
    for name, other in checks:
        if other[0] != shape[0]:
            raise StructuralError(f"{directory / name}: {other[0]} lines, but {ref_name} has {shape[0]}")
        if other[1] != shape[1]:
            raise StructuralError(
                f"{directory / name}: {other[1]} values per line, but {ref_name} has {shape[1]}")

    frames = []
    for i in range(shape[0]):
        frames.append(RawFrame({key: matrix[i] for key, matrix in matrices.items()}, sample_rate_hz,
                               None if labels is None else labels[i]))
    logger.info(f"Loaded {len(frames)} frames of {shape[1]} samples ({split_tag})")
    return Dataset(frames, split_tag)


def write_shl(ds, dir_path, manifest=None, fmt="%.10g"):
    """Write a Dataset in the SHL text layout."""
    manifest = manifest or ShlManifest()
    directory = Path(dir_path)
    os.makedirs(directory, exist_ok=True)
    if not len(ds):
        raise StructuralError("Cannot write an empty dataset")
    for (sensor, axis), name in manifest.axis_files():
        matrix = np.vstack([frame.samples[(sensor, axis)] for frame in ds.frames])
        np.savetxt(directory / name, matrix, fmt=fmt, delimiter=" ")
    if ds.labeled:
        np.savetxt(directory / manifest.label_file, np.vstack([f.labels for f in ds.frames]),
                   fmt="%d", delimiter=" ")
    logger.info(f"Wrote {len(ds)} frames to {directory}")
    return directory


def valid_windows(frame_length, sample_rate_hz):
    """Window lengths in seconds that split a frame into whole sub-frames, longest first."""
    divisors = [d for d in range(frame_length, 0, -1) if frame_length % d == 0]
    return [d / sample_rate_hz for d in divisors]


def _format_windows(windows, limit=12):
    shown = ", ".join(f"{w:g}" for w in windows[:limit])
    return f"{{{shown}{', ...' if len(windows) > limit else ''}}}"


def reframe(ds, window_s):
    """Split every frame into consecutive non-overlapping windows of window_s seconds."""
    if not window_s > 0:
        raise ConfigError(f"Window must be positive, got {window_s}")
    if not len(ds):
        return Dataset([], ds.split_tag)
    rate, length = ds.sample_rate_hz, ds.frame_length
    size = window_s * rate
    if abs(size - round(size)) > 1e-9 or round(size) < 1 or length % int(round(size)):
        raise ConfigError(
            f"Window {window_s:g} s does not divide {length / rate:g} s frames at {rate:g} Hz; "
            f"valid windows: {_format_windows(valid_windows(length, rate))}")
    size = int(round(size))
    frames = [frame.window(start, start + size) for frame in ds.frames for start in range(0, length, size)]
    logger.debug(f"Reframed {len(ds)} frames into {len(frames)} windows of {window_s:g} s")
    return Dataset(frames, ds.split_tag)


def majority_label(labels):
    """Most frequent mode id; ties go to the smallest id."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise StructuralError("Cannot take the majority label of an empty sequence")
    counts = np.bincount(labels, minlength=len(Mode) + 1)
    return int(np.argmax(counts[1:]) + 1)


def transition_ratio(ds):
    """Percentage of frames whose samples span two or more modes."""
    if not len(ds):
        raise StructuralError("Transition ratio of an empty dataset is undefined")
    if not ds.labeled:
        raise StructuralError("Transition ratio needs per-sample labels")
    mixed = sum(1 for frame in ds.frames if np.unique(frame.labels).size > 1)
    return 100.0 * mixed / len(ds)
