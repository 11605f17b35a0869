"""Shared fixtures: small synthetic datasets and a model small enough to train in seconds."""
import numpy as np
import pytest

from dsp import FeatureConfig, build_channel_stack
from fpbilstm import ModelConfig
from ingest import Dataset, RawFrame
from synth import SynthSpec, synth_generate

TINY_STACK = ((4, 5, True), (4, 3, False), (4, 3, True))


def tiny_model_config(widths=(3, 1, 3, 3, 1), **overrides):
    settings = dict(channel_widths=widths, conv_stack=TINY_STACK, num_conv_layers=3,
                    pyramid_taps=(1, 2, 3), bilstm_units=4, dense_sizes=(8, 8))
    settings.update(overrides)
    return ModelConfig(**settings)


def tiny_tree(output_dir, **changes):
    """Run-config tree for 2 s synthetic frames at 20 Hz and the tiny model."""
    tree = {
        "data": {"source": "synth", "synth": {"frames_per_mode": 4, "frame_seconds": 2.0},
                 "test_fraction": 0.25},
        "window_s": 2.0,
        "target_hz": 20.0,
        "model": {"conv_stack": [list(layer) for layer in TINY_STACK], "num_conv_layers": 3,
                  "pyramid_taps": [1, 2, 3], "bilstm_units": 4, "dense_sizes": [8, 8]},
        "train": {"batch_size": 8, "lr": 0.005, "min_lr": 0.00001, "max_epochs": 2},
        "timing": {"repeats": 2, "warmup": 1},
        "output": str(output_dir),
    }
    tree.update(changes)
    return tree


def make_frame(length=12, rate=2.0, labels=None, seed=0):
    rng = np.random.default_rng(seed)
    samples = {(sensor, axis): rng.normal(size=length) for sensor in "AGM" for axis in "xyz"}
    if labels is None:
        labels = np.ones(length, dtype=np.int64)
    return RawFrame(samples, rate, np.asarray(labels))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return SynthSpec(frames_per_mode=4, frame_seconds=2.0)


@pytest.fixture
def small_dataset(small_spec):
    return synth_generate(small_spec, seed=7)


@pytest.fixture
def small_stack(small_dataset):
    """Default channels at 20 Hz: 32 frames of length 40."""
    return build_channel_stack(small_dataset, FeatureConfig(downsample_S=5))


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def labeled_pair():
    """Two frames, the second one spanning a mode change."""
    first = make_frame(labels=[2] * 12, seed=1)
    second = make_frame(labels=[2] * 5 + [5] * 7, seed=2)
    return Dataset([first, second], "train")
