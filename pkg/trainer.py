"""
Training protocol: stratified 90:10 split, shuffled mini-batches, plateau
learning-rate decay, early stopping on validation loss and best-epoch
checkpointing.
"""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedShuffleSplit

from checkpoint import Checkpoint
from config import (ADAM_BETA1, ADAM_BETA2, BATCH_SIZE, EARLY_STOP_PATIENCE, L2_REGULARIZATION,
                    LEARNING_RATE, LR_FACTOR, LR_PATIENCE, MAX_EPOCHS, MIN_LEARNING_RATE, NUM_CLASSES,
                    SEED, TARGET_HZ, VALIDATION_FRACTION, WINDOW_S)
from dsp import FeatureConfig
from errors import ConfigError, StructuralError, TrainingError
from fpbilstm import L2_PARAMETERS, FPbiLSTM, predict
from ingest import Mode
from layers import mse_loss, one_hot
from optim import OptimizerState, adam_step, early_stopping_due, reduce_lr_on_plateau

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "seconds"]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = BATCH_SIZE
    lr: float = LEARNING_RATE
    min_lr: float = MIN_LEARNING_RATE
    lr_factor: float = LR_FACTOR
    lr_patience: int = LR_PATIENCE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    l2: float = L2_REGULARIZATION
    early_stop_patience: int = EARLY_STOP_PATIENCE
    max_epochs: int = MAX_EPOCHS
    validation_fraction: float = VALIDATION_FRACTION
    seed: int = SEED

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if not 0.0 < self.lr_factor < 1.0:
            raise ConfigError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("Patience values must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if not 0.0 < self.min_lr <= self.lr:
            raise ConfigError(f"Need 0 < min_lr <= lr, got min_lr={self.min_lr}, lr={self.lr}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown training settings {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    stopped_early: bool = False

    def append(self, record):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise StructuralError(f"Epoch {record.epoch} does not follow epoch {self.records[-1].epoch}")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def val_losses(self):
        return [r.val_loss for r in self.records]

    @property
    def best(self):
        return min(self.records, key=lambda r: r.val_loss)

    def lr_decays(self):
        """Epochs after which the learning rate changed."""
        return [a.epoch for a, b in zip(self.records, self.records[1:]) if b.lr != a.lr]

    def to_frame(self):
        return pd.DataFrame([asdict(r) for r in self.records], columns=LOG_COLUMNS)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        return path


def _labels_of(data):
    if hasattr(data, "frame_labels"):
        return data.frame_labels()
    if data.labels is None:
        raise StructuralError("Cannot split unlabeled data")
    return np.asarray(data.labels)


def stratified_indices(labels, validation_fraction, seed):
    """Seeded stratified split; the validation size rounds half up and is shared by largest remainder.

    Every class keeps at least one frame on each side.
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    lonely = [Mode(int(c)).label for c, n in zip(classes, counts) if n < 2]
    if lonely:
        raise StructuralError(f"Classes {', '.join(lonely)} have fewer than 2 frames; cannot stratify")

    n_val = int(np.floor(labels.size * validation_fraction + 0.5))
    n_val = min(max(n_val, classes.size), labels.size - classes.size)
    splitter = StratifiedShuffleSplit(n_splits=1, test_size=n_val, random_state=seed)
    train_idx, val_idx = next(splitter.split(np.zeros((labels.size, 1)), labels))

    rng = np.random.default_rng(seed)
    train_idx, val_idx = list(train_idx), list(val_idx)
    for cls in classes:
        in_train = [i for i in train_idx if labels[i] == cls]
        in_val = [i for i in val_idx if labels[i] == cls]
        if not in_val:
            moved = in_train[rng.integers(len(in_train))]
            train_idx.remove(moved)
            val_idx.append(moved)
        elif not in_train:
            moved = in_val[rng.integers(len(in_val))]
            val_idx.remove(moved)
            train_idx.append(moved)
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(np.array(val_idx, dtype=np.int64))


def stratified_split(data, validation_fraction=VALIDATION_FRACTION, seed=SEED):
    """Split a Dataset or ChannelStack into (train, validation)."""
    train_idx, val_idx = stratified_indices(_labels_of(data), validation_fraction, seed)
    if hasattr(data, "subset"):
        return data.subset(train_idx, "sub-train"), data.subset(val_idx, "sub-validation")
    return data.take(train_idx), data.take(val_idx)


def evaluate_loss_accuracy(model, stack, batch_size=BATCH_SIZE):
    """Frame-weighted MSE and accuracy (fraction) in inference mode."""
    probs = model.predict_proba(stack.arrays, batch_size)
    targets = one_hot(stack.labels, NUM_CLASSES)
    loss = float(np.mean((probs - targets) ** 2))
    accuracy = float(np.mean(predict(probs) == stack.labels))
    return loss, accuracy


def fit(train, val, model_cfg, train_cfg, feature_config=None, window_s=WINDOW_S, target_hz=TARGET_HZ):
    """Train on ChannelStacks and return (best-validation-loss checkpoint, TrainLog)."""
    if len(train) == 0 or len(val) == 0:
        raise StructuralError("Training and validation splits must both be non-empty")
    if train.labels is None or val.labels is None:
        raise StructuralError("Training needs labeled frames")
    if tuple(train.widths) != model_cfg.channel_widths or tuple(val.widths) != model_cfg.channel_widths:
        raise ConfigError(f"Channel widths {train.widths} do not match the model's {model_cfg.channel_widths}")
    feature_config = feature_config or FeatureConfig(channels=train.names)

    model = FPbiLSTM(model_cfg, seed=train_cfg.seed)
    params = model.named_parameters()
    state = OptimizerState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2)
    log = TrainLog()
    best_state, best_loss, best_optimizer = None, np.inf, None
    n = len(train)
    logger.info(f"Training {model.parameter_count():,} parameters on {n} frames, validating on {len(val)}")

    for epoch in range(1, train_cfg.max_epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
        loss_sum, correct = 0.0, 0
        for batch_index, start in enumerate(range(0, n, train_cfg.batch_size)):
            batch = train.take(order[start:start + train_cfg.batch_size])
            model.zero_grad()
            probs = model.forward(batch.arrays, training=True)
            loss = mse_loss(probs, one_hot(batch.labels, NUM_CLASSES))
            if not np.isfinite(loss.data):
                raise TrainingError("Non-finite loss", epoch=epoch, batch=batch_index)
            loss.backward()
            adam_step(state, params, l2_set=L2_PARAMETERS, l2=train_cfg.l2, epoch=epoch, batch=batch_index)
            loss_sum += float(loss.data) * len(batch)
            correct += int(np.sum(predict(probs) == batch.labels))
            logger.debug(f"epoch {epoch} batch {batch_index}: loss {float(loss.data):.6f}")

        val_loss, val_acc = evaluate_loss_accuracy(model, val, train_cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingError("Non-finite validation loss", epoch=epoch)
        record = EpochRecord(epoch, loss_sum / n, correct / n, val_loss, val_acc, state.lr,
                             time.perf_counter() - started)
        log.append(record)
        logger.info(f"Epoch {epoch}: loss {record.train_loss:.5f} acc {record.train_acc:.3f} "
                    f"val_loss {val_loss:.5f} val_acc {val_acc:.3f} lr {state.lr:.1e}")

        if val_loss < best_loss:
            best_loss, best_state = val_loss, model.state_dict()
            best_optimizer = OptimizerState.restore(state.scalars(), state.arrays())
        reduce_lr_on_plateau(state, log.val_losses, train_cfg.lr_factor, train_cfg.min_lr, train_cfg.lr_patience)
        if early_stopping_due(log.val_losses, train_cfg.early_stop_patience):
            log.stopped_early = True
            logger.info(f"Early stopping after epoch {epoch}; best epoch {log.best.epoch}")
            break

    checkpoint = Checkpoint(model_cfg, feature_config, best_state, window_s, target_hz, best_optimizer,
                            {"epoch": log.best.epoch, "val_loss": best_loss, "seed": train_cfg.seed,
                             "train_config": train_cfg.to_dict()})
    return checkpoint, log
