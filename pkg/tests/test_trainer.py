"""Stratified splitting, the training log and small end-to-end fits."""
import numpy as np
import pandas as pd
import pytest

import trainer
from errors import ConfigError, StructuralError, TrainingError
from fpbilstm import predict
from trainer import EpochRecord, TrainConfig, TrainLog, fit, stratified_indices, stratified_split

from conftest import tiny_model_config


def _record(epoch, val_loss, lr=1e-4):
    return EpochRecord(epoch, 0.1, 0.5, val_loss, 0.5, lr, 0.01)


# =============================================================================
# Stratified split
# =============================================================================

def test_even_classes_split_ninety_ten():
    labels = np.repeat(np.arange(1, 9), 100)
    train, val = stratified_indices(labels, 0.1, seed=0)
    assert len(val) == 80
    for mode in range(1, 9):
        assert np.sum(labels[val] == mode) == 10
        assert np.sum(labels[train] == mode) == 90


def test_uneven_classes_use_largest_remainder():
    labels = np.array([1] * 10 + [2] * 95)
    train, val = stratified_indices(labels, 0.1, seed=0)
    assert np.sum(labels[val] == 1) == 1
    assert np.sum(labels[val] == 2) == 10
    assert len(train) + len(val) == 105


def test_split_is_a_partition_and_seeded(rng):
    labels = rng.integers(1, 9, size=300)
    train, val = stratified_indices(labels, 0.1, seed=5)
    np.testing.assert_array_equal(np.sort(np.concatenate([train, val])), np.arange(300))
    again = stratified_indices(labels, 0.1, seed=5)
    np.testing.assert_array_equal(again[1], val)
    other = stratified_indices(labels, 0.1, seed=6)
    assert not np.array_equal(other[1], val)


def test_every_class_keeps_a_validation_frame():
    labels = np.array([1, 1, 1, 2, 2, 3, 3, 3, 3])
    train, val = stratified_indices(labels, 0.1, seed=0)
    assert sorted(labels[val].tolist()) == [1, 2, 3]


def test_rare_class_is_moved_into_validation():
    labels = np.array([1] * 2 + [2] * 50)
    train, val = stratified_indices(labels, 0.1, seed=3)
    assert np.sum(labels[val] == 1) == 1
    assert np.sum(labels[val] == 2) == 5
    assert np.sum(labels[train] == 1) == 1


def test_single_frame_class_cannot_be_stratified():
    with pytest.raises(StructuralError, match="Walk"):
        stratified_indices(np.array([1, 1, 2]), 0.1, seed=0)


def test_split_dataset_tags(small_dataset):
    sub_train, sub_val = stratified_split(small_dataset, 0.25, seed=0)
    assert (sub_train.split_tag, sub_val.split_tag) == ("sub-train", "sub-validation")
    assert len(sub_val) == 8
    assert set(sub_val.class_counts().values()) == {1}


def test_split_channel_stack(small_stack):
    sub_train, sub_val = stratified_split(small_stack, 0.1, seed=0)
    assert len(sub_train) + len(sub_val) == len(small_stack)
    assert sub_val.widths == small_stack.widths
    assert sorted(set(sub_val.labels.tolist())) == list(range(1, 9))


# =============================================================================
# TrainConfig and TrainLog
# =============================================================================

@pytest.mark.parametrize("settings", [
    {"batch_size": 0},
    {"validation_fraction": 1.0},
    {"lr_factor": 1.5},
    {"min_lr": 1e-3, "lr": 1e-4},
    {"max_epochs": 0},
    {"l2": -0.1},
])
def test_invalid_train_config(settings):
    with pytest.raises(ConfigError):
        TrainConfig(**settings)


def test_train_config_defaults_follow_protocol():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.lr, cfg.min_lr, cfg.lr_factor) == (50, 1e-4, 1e-5, 0.2)
    assert (cfg.beta1, cfg.beta2, cfg.l2, cfg.early_stop_patience) == (0.9, 0.999, 0.001, 5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"momentum": 0.9})


def test_train_log_tracks_best_and_decays(tmp_path):
    log = TrainLog()
    for epoch, (loss, lr) in enumerate([(0.5, 1e-4), (0.4, 1e-4), (0.45, 2e-5), (0.41, 2e-5)], 1):
        log.append(_record(epoch, loss, lr))
    assert log.best.epoch == 2
    assert log.lr_decays() == [2]
    frame = pd.read_csv(log.to_csv(tmp_path / "log.csv"))
    assert list(frame.columns) == ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "seconds"]
    assert frame["epoch"].tolist() == [1, 2, 3, 4]


def test_train_log_rejects_out_of_order_epochs():
    log = TrainLog()
    log.append(_record(2, 0.5))
    with pytest.raises(StructuralError):
        log.append(_record(2, 0.4))


# =============================================================================
# fit
# =============================================================================

def test_fit_rejects_mismatched_widths(small_stack):
    sub_train, sub_val = stratified_split(small_stack, 0.25, seed=0)
    with pytest.raises(ConfigError):
        fit(sub_train, sub_val, tiny_model_config(widths=(1,)), TrainConfig(max_epochs=1))


def test_fit_rejects_empty_split(small_stack):
    with pytest.raises(StructuralError):
        fit(small_stack.take([]), small_stack, tiny_model_config(), TrainConfig(max_epochs=1))


@pytest.mark.slow
def test_fit_learns_and_checkpoints_best_epoch(small_stack):
    sub_train, sub_val = stratified_split(small_stack, 0.25, seed=0)
    train_cfg = TrainConfig(batch_size=8, lr=5e-3, min_lr=1e-5, max_epochs=12, early_stop_patience=12)
    checkpoint, log = fit(sub_train, sub_val, tiny_model_config(), train_cfg, window_s=2.0, target_hz=20.0)
    assert len(log) == 12 and not log.stopped_early
    assert log.records[-1].train_loss < log.records[0].train_loss
    assert checkpoint.metadata["epoch"] == log.best.epoch
    probs = checkpoint.build_model().predict_proba(sub_val)
    np.testing.assert_allclose(np.mean((probs - np.eye(8)[sub_val.labels - 1]) ** 2), log.best.val_loss, rtol=1e-9)
    assert checkpoint.feature_config.channels == small_stack.names


@pytest.mark.slow
def test_fit_is_deterministic_for_a_seed(small_stack, tmp_path):
    from checkpoint import load_checkpoint, save_checkpoint

    sub_train, sub_val = stratified_split(small_stack, 0.25, seed=0)
    train_cfg = TrainConfig(batch_size=8, lr=5e-3, min_lr=1e-5, max_epochs=3)
    runs = [fit(sub_train, sub_val, tiny_model_config(), train_cfg) for _ in range(2)]
    columns = ["train_loss", "train_acc", "val_loss", "val_acc", "lr"]
    first, second = (log.to_frame()[columns].to_numpy() for _, log in runs)
    np.testing.assert_array_equal(first, second)

    saved = [load_checkpoint(save_checkpoint(ckpt, tmp_path / f"run_{i}.npz")) for i, (ckpt, _) in enumerate(runs)]
    assert saved[0].state.keys() == saved[1].state.keys()
    for name in saved[0].state:
        assert np.array_equal(saved[0].state[name], saved[1].state[name]), name


def test_early_stopping_and_plateau_decay(small_stack, monkeypatch):
    sub_train, sub_val = stratified_split(small_stack, 0.25, seed=0)
    losses = iter([0.5, 0.4, 0.6, 0.7, 0.8, 0.9])
    monkeypatch.setattr(trainer, "evaluate_loss_accuracy", lambda model, stack, batch_size: (next(losses), 0.5))
    train_cfg = TrainConfig(batch_size=8, lr=1e-3, min_lr=1e-5, max_epochs=6, early_stop_patience=2, lr_patience=1)
    checkpoint, log = fit(sub_train, sub_val, tiny_model_config(), train_cfg)
    assert log.stopped_early
    assert len(log) == 4
    assert checkpoint.metadata["epoch"] == 2
    assert [r.lr for r in log.records] == pytest.approx([1e-3, 1e-3, 1e-3, 2e-4])


def test_non_finite_validation_loss_stops_training(small_stack, monkeypatch):
    sub_train, sub_val = stratified_split(small_stack, 0.25, seed=0)
    monkeypatch.setattr(trainer, "evaluate_loss_accuracy", lambda model, stack, batch_size: (float("nan"), 0.0))
    with pytest.raises(TrainingError) as info:
        fit(sub_train, sub_val, tiny_model_config(), TrainConfig(batch_size=8, max_epochs=3))
    assert info.value.epoch == 1


@pytest.mark.slow
def test_trained_model_beats_chance():
    from dsp import FeatureConfig, build_channel_stack
    from synth import SynthSpec, synth_generate

    ds = synth_generate(SynthSpec(frames_per_mode=10, frame_seconds=2.0), seed=11)
    stack = build_channel_stack(ds, FeatureConfig(channels=("A_mag", "G_mag", "M_jerk"), downsample_S=5))
    sub_train, sub_val = stratified_split(stack, 0.2, seed=0)
    train_cfg = TrainConfig(batch_size=8, lr=1e-2, min_lr=1e-5, max_epochs=25, early_stop_patience=25)
    checkpoint, _ = fit(sub_train, sub_val, tiny_model_config(widths=(1, 1, 3)), train_cfg)
    preds = predict(checkpoint.build_model().predict_proba(sub_train))
    assert np.mean(preds == sub_train.labels) > 0.125
