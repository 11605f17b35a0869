"""
Checkpoint container: one .npz file with a JSON header and little-endian float64 arrays.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from dsp import FeatureConfig
from errors import CheckpointError, ConfigError
from fpbilstm import FPbiLSTM, ModelConfig
from optim import OptimizerState

logger = logging.getLogger(__name__)

HEADER_KEY = "__header__"


@dataclass
class Checkpoint:
    model_config: ModelConfig
    feature_config: FeatureConfig
    state: dict
    window_s: float
    target_hz: float
    optimizer: Optional[OptimizerState] = None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, feature_config, window_s, target_hz, optimizer=None, **metadata):
        return cls(model.cfg, feature_config, model.state_dict(), window_s, target_hz,
                   optimizer, metadata)

    @property
    def native_rate_hz(self):
        """Sample rate the model's channels were built from."""
        return self.feature_config.downsample_S * self.target_hz

    def check_rate(self, sample_rate_hz):
        if abs(sample_rate_hz - self.native_rate_hz) > 1e-9:
            raise ConfigError(f"Input sampled at {sample_rate_hz:g} Hz; this checkpoint expects "
                              f"{self.native_rate_hz:g} Hz (downsampled by {self.feature_config.downsample_S} "
                              f"to {self.target_hz:g} Hz)")

    def build_model(self):
        model = FPbiLSTM(self.model_config)
        model.load_state(self.state)
        return model


def save_checkpoint(checkpoint, path):
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "byte_order": "little",
        "model_config": checkpoint.model_config.to_dict(),
        "feature_config": checkpoint.feature_config.to_dict(),
        "window_s": checkpoint.window_s,
        "target_hz": checkpoint.target_hz,
        "optimizer": None if checkpoint.optimizer is None else checkpoint.optimizer.scalars(),
        "metadata": checkpoint.metadata,
    }
    arrays = {name: np.asarray(value, dtype="<f8") for name, value in checkpoint.state.items()}
    if checkpoint.optimizer is not None:
        arrays.update({f"optimizer/{name}": np.asarray(value, dtype="<f8")
                       for name, value in checkpoint.optimizer.arrays().items()})
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as handle:
        np.savez(handle, **{HEADER_KEY: np.array(json.dumps(header))}, **arrays)
    logger.info(f"Checkpoint written to {path} ({len(checkpoint.state)} tensors)")
    return path


def load_checkpoint(path):
    if not os.path.isfile(path):
        raise CheckpointError(f"Checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as archive:
            contents = {name: archive[name] for name in archive.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")

    if HEADER_KEY not in contents:
        raise CheckpointError(f"{path} has no checkpoint header")
    try:
        header = json.loads(str(contents.pop(HEADER_KEY)))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path} has a malformed header: {e}")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file (format {header.get('format')!r})")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has unsupported version {header.get('version')}; expected {CHECKPOINT_VERSION}")

    optimizer_arrays = {name[len("optimizer/"):]: value for name, value in contents.items()
                        if name.startswith("optimizer/")}
    state = {name: value for name, value in contents.items() if not name.startswith("optimizer/")}
    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = OptimizerState.restore(header["optimizer"], optimizer_arrays)
    return Checkpoint(
        model_config=ModelConfig.from_dict(header["model_config"]),
        feature_config=FeatureConfig(**header["feature_config"]),
        state=state,
        window_s=header["window_s"],
        target_hz=header["target_hz"],
        optimizer=optimizer,
        metadata=header.get("metadata", {}),
    )
