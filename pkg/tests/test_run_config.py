import json

import pytest

from errors import ConfigError
from run_config import DEFAULTS, RunConfig, deep_merge, downsample_factor, load_run_config, parse_override


def test_defaults_match_the_reference_setup():
    cfg = RunConfig.from_dict({})
    assert (cfg.window_s, cfg.target_hz) == (60.0, 20.0)
    assert cfg.features.channels == ("A_jerk", "A_mag", "M_jerk", "G_xyz", "G_mag")
    assert cfg.features.downsample_S == 5
    assert cfg.model.channel_widths == (3, 1, 3, 3, 1)
    assert cfg.model.pyramid_taps == (1, 2, 3, 5)
    assert cfg.train.batch_size == 50 and cfg.train.lr == 1e-4


def test_parse_override():
    assert parse_override("train.max_epochs=5") == {"train": {"max_epochs": 5}}
    assert parse_override("model.pyramid_taps=[3,5]") == {"model": {"pyramid_taps": [3, 5]}}
    assert parse_override("data.train_dir=data/shl/train") == {"data": {"train_dir": "data/shl/train"}}
    with pytest.raises(ConfigError):
        parse_override("train.max_epochs")


def test_deep_merge_rejects_unknown_keys():
    merged = deep_merge(DEFAULTS, {"train": {"lr": 0.01}})
    assert merged["train"]["lr"] == 0.01
    assert merged["train"]["batch_size"] == DEFAULTS["train"]["batch_size"]
    assert DEFAULTS["train"]["lr"] == 1e-4
    with pytest.raises(ConfigError, match="train.learning_rate"):
        deep_merge(DEFAULTS, {"train": {"learning_rate": 0.01}})


@pytest.mark.parametrize("native, target, factor", [(100, 20, 5), (100, 100, 1), (100, 1, 100), (50, 25, 2)])
def test_downsample_factor(native, target, factor):
    assert downsample_factor(native, target) == factor


@pytest.mark.parametrize("target", [30.0, 200.0, 0.0])
def test_downsample_factor_must_divide(target):
    with pytest.raises(ConfigError):
        downsample_factor(100.0, target)


def test_model_widths_follow_feature_channels():
    cfg = RunConfig.from_dict({"features": {"channels": ["A_mag", "G_xyz"]}})
    assert cfg.model.channel_widths == (1, 3)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"window_s": 30, "train": {"max_epochs": 7}, "seeds": [0, 1, 2]}))
    cfg = load_run_config(str(path), ["train.max_epochs=3", "target_hz=10"])
    assert cfg.window_s == 30.0 and cfg.target_hz == 10.0
    assert cfg.train.max_epochs == 3
    assert cfg.seeds == (0, 1, 2)
    assert cfg.with_seed(2).train.seed == 2


def test_invalid_files(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_run_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_run_config(str(bad))


@pytest.mark.parametrize("tree", [
    {"data": {"source": "kaggle"}},
    {"data": {"test_fraction": 1.0}},
    {"seeds": []},
    {"workers": 0},
    {"model": {"dense_sizes": [64, 4]}},
])
def test_invalid_settings(tree):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(tree)


def test_synth_source_uses_generator_rate():
    cfg = RunConfig.from_dict({"data": {"source": "synth", "synth": {"sample_rate_hz": 50.0}}, "target_hz": 25.0})
    assert cfg.data.native_rate_hz == 50.0
    assert cfg.features.downsample_S == 2


def test_resolved_tree_is_written(tmp_path):
    cfg = RunConfig.from_dict({"train": {"max_epochs": 2}})
    path = cfg.write_resolved(str(tmp_path / "out"))
    with open(path) as handle:
        written = json.load(handle)
    assert written["train"]["max_epochs"] == 2
    assert RunConfig.from_dict(written).train == cfg.train
