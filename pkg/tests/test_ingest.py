"""SHL loading, reframing and the majority labeling policy."""
import numpy as np
import pytest

from config import SHL_FILE_NAMES, SHL_LABEL_FILE
from errors import ConfigError, ParseError, StructuralError
from ingest import Dataset, Mode, RawFrame, load_shl, majority_label, reframe, transition_ratio, valid_windows, write_shl

from conftest import make_frame


def _write_fixture(directory, lines=3, width=12, labels=True):
    """Every axis file holds value = 100*line + column, so any sensor mix-up shows."""
    directory.mkdir(parents=True, exist_ok=True)
    for offset, (sensor, axes) in enumerate(SHL_FILE_NAMES.items()):
        for axis_index, (axis, name) in enumerate(axes.items()):
            rows = [" ".join(f"{100 * i + j + 0.5 * offset + 0.25 * axis_index:g}" for j in range(width))
                    for i in range(lines)]
            (directory / name).write_text("\n".join(rows) + "\n", encoding="utf-8")
    if labels:
        rows = ["\t".join(str(1 + (i + j // 6) % 8) for j in range(width)) for i in range(lines)]
        (directory / SHL_LABEL_FILE).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return directory


# =============================================================================
# Modes and frames
# =============================================================================

def test_mode_ids_and_names_are_a_bijection():
    names = [mode.label for mode in Mode]
    assert names == ["Still", "Walk", "Run", "Bike", "Car", "Bus", "Train", "Subway"]
    assert [int(m) for m in Mode] == list(range(1, 9))
    assert Mode.from_name("Subway") is Mode.SUBWAY
    with pytest.raises(ConfigError):
        Mode.from_name("Tram")


def test_raw_frame_rejects_ragged_axes_and_bad_labels():
    with pytest.raises(StructuralError):
        RawFrame({("A", "x"): np.zeros(4), ("A", "y"): np.zeros(5)})
    with pytest.raises(StructuralError):
        RawFrame({("A", "x"): np.zeros(4)}, 100.0, np.array([1, 2, 9, 1]))
    with pytest.raises(StructuralError):
        RawFrame({("A", "x"): np.zeros(4)}, 0.0)


def test_raw_frame_arrays_are_read_only():
    frame = make_frame()
    with pytest.raises(ValueError):
        frame.samples[("A", "x")][0] = 1.0


def test_dataset_requires_equal_frame_geometry():
    with pytest.raises(StructuralError):
        Dataset([make_frame(length=12), make_frame(length=10)])
    with pytest.raises(ConfigError):
        Dataset([make_frame()], "holdout")


# =============================================================================
# load_shl
# =============================================================================

def test_load_shl_fixture_geometry(tmp_path):
    directory = _write_fixture(tmp_path / "train")
    ds = load_shl(directory, "train", sample_rate_hz=2.0)
    assert len(ds) == 3
    assert ds.frame_length == 12
    assert ds.sample_rate_hz == 2.0
    assert ds.frames[1].samples[("A", "x")][3] == pytest.approx(103.0)
    assert ds.frames[2].samples[("G", "z")][0] == pytest.approx(200.5 + 0.5)
    assert ds.frames[0].labels[:6].tolist() == [1] * 6


def test_load_shl_matches_written_dataset(tmp_path, small_dataset):
    write_shl(small_dataset, tmp_path / "shl")
    loaded = load_shl(tmp_path / "shl", "train")
    assert len(loaded) == len(small_dataset)
    for original, frame in zip(small_dataset, loaded):
        np.testing.assert_array_equal(frame.labels, original.labels)
        for key, values in original.samples.items():
            np.testing.assert_allclose(frame.samples[key], values, rtol=1e-9, atol=1e-12)


def test_load_shl_empty_directory_is_structural_error(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(StructuralError):
        load_shl(tmp_path / "empty")


def test_load_shl_missing_label_file(tmp_path):
    directory = _write_fixture(tmp_path / "d", labels=False)
    with pytest.raises(StructuralError, match="label"):
        load_shl(directory, "train")
    ds = load_shl(directory, "test")
    assert not ds.labeled


def test_load_shl_reports_parse_location(tmp_path):
    directory = _write_fixture(tmp_path / "d")
    path = directory / SHL_FILE_NAMES["G"]["y"]
    lines = path.read_text().splitlines()
    tokens = lines[1].split()
    tokens[4] = "n/a"
    lines[1] = " ".join(tokens)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_shl(directory)
    assert (info.value.line, info.value.column, info.value.token) == (2, 5, "n/a")
    assert info.value.path.endswith("Gyr_y.txt")


def test_load_shl_mismatched_line_counts(tmp_path):
    directory = _write_fixture(tmp_path / "d")
    path = directory / SHL_FILE_NAMES["M"]["x"]
    path.write_text("\n".join(path.read_text().splitlines()[:2]) + "\n")
    with pytest.raises(StructuralError, match="Mag_x.txt"):
        load_shl(directory)


def test_load_shl_ragged_line(tmp_path):
    directory = _write_fixture(tmp_path / "d")
    path = directory / SHL_FILE_NAMES["A"]["z"]
    lines = path.read_text().splitlines()
    lines[2] += " 1.0"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(StructuralError, match=":3:"):
        load_shl(directory)


def test_load_shl_rejects_out_of_range_labels(tmp_path):
    directory = _write_fixture(tmp_path / "d")
    path = directory / SHL_LABEL_FILE
    lines = path.read_text().splitlines()
    lines[0] = "0" + lines[0][1:]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(StructuralError, match="outside"):
        load_shl(directory)


# =============================================================================
# reframe
# =============================================================================

def test_valid_windows_of_a_minute_at_100_hz():
    windows = valid_windows(6000, 100.0)
    assert windows[:6] == [60.0, 30.0, 20.0, 15.0, 12.0, 10.0]
    assert 5.0 in windows and 7.0 not in windows


def test_reframe_splits_into_ordered_sub_frames():
    labels = [1] * 3000 + [2] * 3000
    frame = RawFrame({("A", "x"): np.arange(6000.0)}, 100.0, labels)
    ds = reframe(Dataset([frame, frame]), 5.0)
    assert len(ds) == 24
    assert ds.frame_length == 500
    np.testing.assert_array_equal(ds.frames[1].samples[("A", "x")], np.arange(500.0, 1000.0))
    joined = np.concatenate([f.labels for f in ds.frames[:12]])
    np.testing.assert_array_equal(joined, labels)


def test_reframe_rejects_non_divisor_with_valid_list():
    frame = RawFrame({("A", "x"): np.zeros(6000)}, 100.0)
    with pytest.raises(ConfigError) as info:
        reframe(Dataset([frame]), 7.0)
    assert "30, 20, 15, 12, 10" in str(info.value)


def test_reframe_whole_frame_is_identity(small_dataset):
    ds = reframe(small_dataset, 2.0)
    assert len(ds) == len(small_dataset)
    assert ds.frame_length == small_dataset.frame_length


# =============================================================================
# Labeling policy
# =============================================================================

@pytest.mark.parametrize("labels, expected", [
    ([3, 3, 3], 3),
    ([1, 1, 2, 2, 2], 2),
    ([1, 1, 2, 2], 1),
    ([8, 5, 5, 8], 5),
])
def test_majority_label(labels, expected):
    assert majority_label(labels) == expected
    assert majority_label(labels[::-1]) == expected


def test_majority_label_of_empty_sequence():
    with pytest.raises(StructuralError):
        majority_label([])


def test_transition_ratio_counts_mixed_frames():
    frames = [make_frame(labels=[4] * 12, seed=i) for i in range(3)]
    frames.append(make_frame(labels=[4] * 6 + [6] * 6, seed=3))
    assert transition_ratio(Dataset(frames)) == pytest.approx(25.0)
    assert transition_ratio(Dataset(frames[::-1])) == pytest.approx(25.0)
    assert transition_ratio(Dataset(frames[:3])) == 0.0


def test_transition_ratio_of_empty_dataset():
    with pytest.raises(StructuralError):
        transition_ratio(Dataset([]))
