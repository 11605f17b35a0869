"""
On-disk channel cache.

Entries are keyed by (data source identity and file layout, split, feature settings, window,
rate) and remember the content hash of the source they were built from. A key
that matches but whose source content has changed is stale: the cache refuses
to guess and asks for a purge.
"""
import hashlib
import json
import logging
import os

import numpy as np

from database import db
from dsp import ChannelStack
from errors import CacheError
from models import CacheEntry
from pipeline import build_stack, fingerprint

logger = logging.getLogger(__name__)


def cache_description(cfg, split, identity):
    return {
        "identity": identity,
        "split": split,
        "features": cfg.features.to_dict(),
        "window_s": cfg.window_s,
        "target_hz": cfg.target_hz,
    }


def cache_key(description):
    return hashlib.sha256(json.dumps(description, sort_keys=True).encode()).hexdigest()[:32]


def save_stack(stack, path):
    arrays = {f"channel_{i}": a for i, a in enumerate(stack.arrays)}
    if stack.labels is not None:
        arrays["labels"] = stack.labels
    if stack.sample_labels is not None:
        arrays["sample_labels"] = stack.sample_labels
    with open(path, "wb") as handle:
        np.savez(handle, names=np.array(json.dumps(list(stack.names))), **arrays)


def load_stack(path):
    with np.load(path, allow_pickle=False) as archive:
        names = json.loads(str(archive["names"]))
        arrays = [archive[f"channel_{i}"] for i in range(len(names))]
        labels = archive["labels"] if "labels" in archive.files else None
        sample_labels = archive["sample_labels"] if "sample_labels" in archive.files else None
    return ChannelStack(tuple(names), arrays, labels, sample_labels)


class ChannelCache:
    def __init__(self, cache_dir, db_app):
        self.cache_dir = os.path.abspath(cache_dir)
        self.db_app = db_app
        self.hits = 0
        self.misses = 0
        os.makedirs(self.cache_dir, exist_ok=True)

    def get_or_build(self, cfg, split):
        """Return (ChannelStack, hit) for one split of the configured data."""
        fp = fingerprint(cfg, split)
        description = cache_description(cfg, split, fp.identity)
        key = cache_key(description)
        with self.db_app.app_context():
            entry = CacheEntry.query.filter_by(key=key).first()
            if entry is not None:
                if entry.data_hash != fp.data_hash:
                    raise CacheError(
                        f"Cache entry {key} for {fp.identity} ({split}) was built from different data; "
                        f"run `preprocess --purge` and try again")
                if os.path.isfile(entry.path):
                    self.hits += 1
                    logger.info(f"Cache hit for {split} ({entry.frames} frames, key {key[:12]})")
                    return load_stack(entry.path), True
                logger.warning(f"Cache file {entry.path} vanished; rebuilding")
                db.session.delete(entry)
                db.session.commit()

            self.misses += 1
            logger.info(f"Cache miss for {split} (key {key[:12]}); building channels")
            stack = build_stack(cfg, split)
            path = os.path.join(self.cache_dir, f"{key}.npz")
            save_stack(stack, path)
            try:
                db.session.add(CacheEntry(key=key, identity=fp.identity, split=split, data_hash=fp.data_hash,
                                          description=json.dumps(description), path=path,
                                          frames=len(stack), length=stack.length))
                db.session.commit()
            except Exception as e:
                logger.error(f"Error recording cache entry {key}: {e}")
                db.session.rollback()
                raise
            return stack, False

    def purge(self):
        """Delete every cached file and index row; returns the number removed."""
        with self.db_app.app_context():
            entries = CacheEntry.query.all()
            for entry in entries:
                if os.path.isfile(entry.path):
                    os.remove(entry.path)
                db.session.delete(entry)
            db.session.commit()
        logger.info(f"Purged {len(entries)} cache entries from {self.cache_dir}")
        return len(entries)

    @property
    def hit_rate(self):
        total = self.hits + self.misses
        return 100.0 * self.hits / total if total else 0.0
