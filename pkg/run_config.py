"""
Run configuration: built-in defaults, then an optional JSON file, then
`--set dotted.key=value` overrides. The resolved tree is what every command
writes next to its outputs.
"""
import copy
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

from config import (BILSTM_UNITS, CONV_STACK, DATABASE_URL, DENSE_SIZES, NATIVE_RATE_HZ, OUTPUT_DIR,
                    DEFAULT_CHANNELS, PYRAMID_TAPS, SEED, SMOOTHING_M, TARGET_HZ, TIMING_REPEATS,
                    TIMING_WARMUP, WINDOW_S)
from dsp import FeatureConfig
from errors import ConfigError
from fpbilstm import ModelConfig
from synth import SynthSpec
from trainer import TrainConfig

logger = logging.getLogger(__name__)

SOURCES = ("shl", "synth")

DEFAULTS = {
    "data": {
        "source": "shl",
        "train_dir": None,
        "test_dir": None,
        "sample_rate_hz": NATIVE_RATE_HZ,
        "manifest": None,
        "synth": SynthSpec().to_dict(),
        "synth_seed": SEED,
        "test_fraction": 0.2,
    },
    "features": {"channels": list(DEFAULT_CHANNELS), "smoothing_m": SMOOTHING_M},
    "window_s": WINDOW_S,
    "target_hz": TARGET_HZ,
    "model": {
        "conv_stack": [list(layer) for layer in CONV_STACK],
        "num_conv_layers": len(CONV_STACK),
        "pyramid_taps": list(PYRAMID_TAPS),
        "bilstm_units": BILSTM_UNITS,
        "dense_sizes": list(DENSE_SIZES),
    },
    "train": TrainConfig().to_dict(),
    "seeds": [SEED],
    "output": OUTPUT_DIR,
    "database_url": DATABASE_URL,
    "timing": {"repeats": TIMING_REPEATS, "warmup": TIMING_WARMUP},
    "workers": 1,
}


def deep_merge(base, overrides, path=""):
    """Recursively merge overrides into a copy of base; keys missing from base are errors."""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        where = f"{path}{key}"
        if key not in merged:
            raise ConfigError(f"Unknown configuration key {where!r}")
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value, f"{where}.")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text):
    """'train.max_epochs=5' -> {'train': {'max_epochs': 5}}; values parse as JSON, else stay strings."""
    if "=" not in text:
        raise ConfigError(f"Override {text!r} must look like dotted.key=value")
    dotted, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"Override {text!r} has an empty key")
    tree = value
    for key in reversed(keys):
        tree = {key: tree}
    return tree


def downsample_factor(native_hz, target_hz):
    if not target_hz > 0:
        raise ConfigError(f"Target rate must be positive, got {target_hz}")
    factor = native_hz / target_hz
    if abs(factor - round(factor)) > 1e-9 or round(factor) < 1:
        raise ConfigError(f"Target rate {target_hz:g} Hz does not divide the native rate {native_hz:g} Hz")
    return int(round(factor))


@dataclass(frozen=True)
class DataConfig:
    source: str
    train_dir: Optional[str]
    test_dir: Optional[str]
    sample_rate_hz: float
    manifest: Optional[dict]
    synth: SynthSpec
    synth_seed: int
    test_fraction: float

    @property
    def native_rate_hz(self):
        return self.synth.sample_rate_hz if self.source == "synth" else self.sample_rate_hz


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    features: FeatureConfig
    window_s: float
    target_hz: float
    model: ModelConfig
    train: TrainConfig
    seeds: tuple
    output: str
    database_url: str
    timing_repeats: int
    timing_warmup: int
    workers: int
    tree: dict

    @classmethod
    def from_dict(cls, tree):
        tree = deep_merge(DEFAULTS, tree)
        data = dict(tree["data"])
        if data["source"] not in SOURCES:
            raise ConfigError(f"Unknown data source {data['source']!r}; expected one of {SOURCES}")
        if not 0.0 < data["test_fraction"] < 1.0:
            raise ConfigError(f"data.test_fraction must lie in (0, 1), got {data['test_fraction']}")
        data_cfg = DataConfig(synth=SynthSpec.from_dict(data.pop("synth")), **data)

        factor = downsample_factor(data_cfg.native_rate_hz, tree["target_hz"])
        features = FeatureConfig(channels=tree["features"]["channels"],
                                 smoothing_m=tree["features"]["smoothing_m"], downsample_S=factor)
        model = ModelConfig.from_dict({**tree["model"], "channel_widths": list(features.widths)})
        seeds = tuple(int(s) for s in tree["seeds"])
        if not seeds:
            raise ConfigError("At least one seed is required")
        train = TrainConfig.from_dict({**tree["train"], "seed": seeds[0]})
        if tree["workers"] < 1:
            raise ConfigError(f"workers must be at least 1, got {tree['workers']}")
        return cls(
            data=data_cfg, features=features, window_s=float(tree["window_s"]),
            target_hz=float(tree["target_hz"]), model=model, train=train, seeds=seeds,
            output=tree["output"], database_url=tree["database_url"] or "",
            timing_repeats=int(tree["timing"]["repeats"]), timing_warmup=int(tree["timing"]["warmup"]),
            workers=int(tree["workers"]), tree=tree,
        )

    def to_dict(self):
        return copy.deepcopy(self.tree)

    def derive(self, changes):
        """A new RunConfig with a partial tree merged over this one."""
        return RunConfig.from_dict(deep_merge(self.tree, changes))

    def with_seed(self, seed):
        return self.derive({"seeds": [seed]})

    def write_resolved(self, directory):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, "resolved_config.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.tree, handle, indent=2)
        return path


def load_run_config(path=None, overrides=()):
    tree = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                tree = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"Config file {path} does not exist")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        logger.info(f"Loaded configuration from {path}")
    for text in overrides:
        tree = _merge_loose(tree, parse_override(text))
    return RunConfig.from_dict(tree)


def _merge_loose(base, overrides):
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge_loose(merged[key], value)
        else:
            merged[key] = value
    return merged
