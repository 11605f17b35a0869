"""
Data source resolution: SHL directories or the synthetic generator, reframed
to the configured window and turned into model channels.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from dsp import build_channel_stack
from errors import StructuralError
from ingest import ShlManifest, load_shl, reframe
from synth import synth_generate
from trainer import stratified_indices

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")


@dataclass(frozen=True)
class SourceFingerprint:
    """identity names where data comes from; data_hash changes whenever its content does."""
    identity: str
    data_hash: str


def _hash_files(paths):
    digest = hashlib.sha256()
    for path in paths:
        digest.update(path.name.encode())
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


def _split_dir(cfg, split):
    directory = cfg.data.train_dir if split == "train" else cfg.data.test_dir
    if not directory:
        raise StructuralError(f"No directory configured for the {split} split (data.{split}_dir)")
    return Path(directory)


def _synth_description(cfg):
    return json.dumps({"spec": cfg.data.synth.to_dict(), "seed": cfg.data.synth_seed,
                       "test_fraction": cfg.data.test_fraction}, sort_keys=True)


def fingerprint(cfg, split):
    if split not in SPLITS:
        raise StructuralError(f"Unknown split {split!r}; expected one of {SPLITS}")
    if cfg.data.source == "synth":
        digest = hashlib.sha256(_synth_description(cfg).encode()).hexdigest()
        return SourceFingerprint(f"synth:{digest[:16]}:{split}", digest)
    directory = _split_dir(cfg, split)
    manifest = ShlManifest.from_dict(cfg.data.manifest)
    files = [directory / name for _, name in manifest.axis_files()]
    files += [p for p in [directory / manifest.label_file] if p.is_file()]
    missing = [str(p) for p in files if not p.is_file()]
    if missing:
        raise StructuralError(f"Missing sensor files: {', '.join(missing)}")
    layout = json.dumps({"files": {s: dict(axes) for s, axes in manifest.files.items()},
                         "label_file": manifest.label_file}, sort_keys=True)
    layout_digest = hashlib.sha256(layout.encode()).hexdigest()[:16]
    return SourceFingerprint(f"shl:{directory.resolve()}:{layout_digest}", _hash_files(files))


def load_split(cfg, split):
    """Native-rate frames of one split, before reframing."""
    if cfg.data.source == "shl":
        return load_shl(_split_dir(cfg, split), split, cfg.data.sample_rate_hz,
                        ShlManifest.from_dict(cfg.data.manifest))
    full = synth_generate(cfg.data.synth, cfg.data.synth_seed)
    train_idx, test_idx = stratified_indices(full.frame_labels(), cfg.data.test_fraction, cfg.data.synth_seed)
    return full.subset(train_idx if split == "train" else test_idx, split)


def load_windows(cfg, split):
    return reframe(load_split(cfg, split), cfg.window_s)


def build_stack(cfg, split):
    """Load, reframe and build channels for one split, with no caching."""
    ds = load_windows(cfg, split)
    logger.info(f"{split}: {len(ds)} frames of {cfg.window_s:g} s")
    return build_channel_stack(ds, cfg.features)
