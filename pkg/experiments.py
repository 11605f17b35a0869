"""
Experiment grids: window/rate sweeps, ablations and the labeling-policy study.

A grid is a list of Cells, each a partial config tree merged over the run
config. Cells run inline or in worker processes; rows are merged back in
grid order and flushed to CSV (and the results database) as cells finish.
"""
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from config import PYRAMID_TAPS, SWEEP_RATES, SWEEP_WINDOWS
from database import db
from dsp import MULTI_SENSOR_FEATURES, SINGLE_SENSOR_FEATURES, build_channel_stack
from errors import ConfigError, PipelineError
from fpbilstm import predict
from ingest import reframe, transition_ratio
from metrics import f1_gap, frame_report, per_sample_report
from models import ExperimentResult
from pipeline import load_split
from run_config import RunConfig, deep_merge
from trainer import fit, stratified_split

logger = logging.getLogger(__name__)

ABLATION_MODES = ("conv_depth", "pyramid_taps", "features")

# Tap subsets compared against the full pyramid; "3" is the plain CNN-biLSTM wiring
PYRAMID_ROWS = (("1", (2, 3, 5)), ("2", (3, 5)), ("3", (5,)), ("4", (1, 2, 3, 4, 5)), ("full", PYRAMID_TAPS))

RESULT_COLUMNS = ["experiment", "grid_index", "label", "unit", "accuracy", "macro_f1", "parameter_count",
                  "train_seconds", "inference_ms", "epochs", "train_transition_ratio",
                  "test_transition_ratio", "error"]


@dataclass(frozen=True)
class Cell:
    index: int
    experiment: str
    label: str
    parameters: dict = field(default_factory=dict)
    changes: dict = field(default_factory=dict)


def sweep_grid(windows=SWEEP_WINDOWS, rates=SWEEP_RATES, experiment="sweep"):
    windows, rates = list(windows), list(rates)
    if not windows or not rates:
        raise ConfigError("Sweeps need at least one window and one rate")
    cells = []
    for window in windows:
        for rate in rates:
            cells.append(Cell(len(cells), experiment, f"{window:g}s@{rate:g}Hz",
                              {"window_s": window, "target_hz": rate},
                              {"window_s": window, "target_hz": rate}))
    return cells


def labeling_grid(windows=SWEEP_WINDOWS, rates=None, base_cfg=None):
    rates = rates or [base_cfg.target_hz if base_cfg else 20.0]
    return sweep_grid(windows, rates, experiment="labeling")


def ablation_grid(mode, base_cfg):
    if mode not in ABLATION_MODES:
        raise ConfigError(f"Unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
    cells = []
    experiment = f"ablate_{mode}"
    if mode == "conv_depth":
        for depth in range(1, len(base_cfg.model.conv_stack) + 1):
            model = base_cfg.model.for_depth(depth)
            taps = list(model.pyramid_taps)
            cells.append(Cell(len(cells), experiment, f"depth {depth}",
                              {"depth": depth, "taps": ",".join(map(str, taps))},
                              {"model": {"num_conv_layers": depth, "pyramid_taps": taps}}))
    elif mode == "pyramid_taps":
        for name, taps in PYRAMID_ROWS:
            cells.append(Cell(len(cells), experiment, name, {"taps": ",".join(map(str, taps))},
                              {"model": {"num_conv_layers": len(base_cfg.model.conv_stack),
                                         "pyramid_taps": list(taps)}}))
    else:
        for group, presets in (("single", SINGLE_SENSOR_FEATURES), ("multiple", MULTI_SENSOR_FEATURES)):
            for name, features in presets.items():
                cells.append(Cell(len(cells), experiment, name,
                                  {"group": group, "channels": "+".join(features.channels)},
                                  {"features": {"channels": list(features.channels)}}))
    return cells


# Native-rate splits are loaded once per process and shared by every cell
_native_splits = {}


def _native(cfg, split):
    key = (json.dumps(cfg.tree["data"], sort_keys=True), split)
    if key not in _native_splits:
        _native_splits[key] = load_split(cfg, split)
    return _native_splits[key]


def time_inference(model, stack, repeats, warmup):
    """Median wall time in ms of a single-frame forward pass."""
    frame = [a[:1] for a in stack.arrays]
    for _ in range(warmup):
        model.forward(frame)
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        model.forward(frame)
        times.append(time.perf_counter() - started)
    return 1000.0 * float(np.median(times)) if times else None


def _base_row(cell):
    return {"experiment": cell.experiment, "grid_index": cell.index, "label": cell.label, **cell.parameters}


def run_cell(base_tree, cell, output_dir=None):
    """Train and evaluate one grid cell; returns one row per evaluation unit."""
    try:
        cfg = RunConfig.from_dict(deep_merge(base_tree, cell.changes))
        cfg.model.tap_lengths(int(round(cfg.window_s * cfg.target_hz)))
        train_ds = reframe(_native(cfg, "train"), cfg.window_s)
        test_ds = reframe(_native(cfg, "test"), cfg.window_s)
        ratios = {"train_transition_ratio": transition_ratio(train_ds),
                  "test_transition_ratio": transition_ratio(test_ds)}
        train_stack = build_channel_stack(train_ds, cfg.features)
        test_stack = build_channel_stack(test_ds, cfg.features)
        sub_train, sub_val = stratified_split(train_stack, cfg.train.validation_fraction, cfg.train.seed)

        started = time.perf_counter()
        checkpoint, log = fit(sub_train, sub_val, cfg.model, cfg.train, cfg.features, cfg.window_s, cfg.target_hz)
        train_seconds = time.perf_counter() - started
        if output_dir:
            os.makedirs(output_dir, exist_ok=True)
            log.to_csv(os.path.join(output_dir, f"cell_{cell.index:03d}_trainlog.csv"))

        model = checkpoint.build_model()
        preds = predict(model.predict_proba(test_stack, cfg.train.batch_size))
        frame = frame_report(test_stack.labels, preds)
        sample = per_sample_report(test_stack.sample_labels, preds)
        inference_ms = time_inference(model, test_stack, cfg.timing_repeats, cfg.timing_warmup)
    except PipelineError as e:
        logger.warning(f"{cell.experiment} cell {cell.index} ({cell.label}) skipped: {e}")
        return [{**_base_row(cell), "unit": None, "error": str(e)}]
    except Exception as e:
        logger.error(f"Error in {cell.experiment} cell {cell.index} ({cell.label}): {e}")
        return [{**_base_row(cell), "unit": None, "error": f"{type(e).__name__}: {e}"}]

    shared = {"parameter_count": model.parameter_count(), "train_seconds": train_seconds,
              "inference_ms": inference_ms, "epochs": len(log), "error": "", **ratios}
    rows = []
    for report in (frame, sample):
        row = {**_base_row(cell), "unit": report.unit, "accuracy": report.accuracy,
               "macro_f1": report.macro_f1, **shared}
        if report.unit == "frame":
            row["f1_gap"] = f1_gap(frame, sample)
        rows.append(row)
    logger.info(f"{cell.experiment} cell {cell.index} ({cell.label}): accuracy {frame.accuracy:.1f}%, "
                f"macro-F1 {frame.macro_f1:.1f}% per frame, {sample.macro_f1:.1f}% per sample")
    return rows


def rows_to_frame(rows):
    frame = pd.DataFrame(rows)
    leading = [c for c in ["experiment", "grid_index", "label"] if c in frame.columns]
    params = [c for c in frame.columns if c not in RESULT_COLUMNS and c != "f1_gap"]
    trailing = [c for c in RESULT_COLUMNS[3:] + ["f1_gap"] if c in frame.columns]
    return frame[leading + params + trailing].sort_values(["grid_index"], kind="stable")


def record_results(db_app, rows):
    result_keys = set(RESULT_COLUMNS) | {"f1_gap"}
    with db_app.app_context():
        try:
            for row in rows:
                parameters = {k: v for k, v in row.items() if k not in result_keys}
                db.session.add(ExperimentResult(
                    experiment=row["experiment"], grid_index=row["grid_index"],
                    parameters=json.dumps(parameters, default=str), unit=row.get("unit"),
                    accuracy=row.get("accuracy"), macro_f1=row.get("macro_f1"),
                    parameter_count=row.get("parameter_count"), train_seconds=row.get("train_seconds"),
                    inference_ms=row.get("inference_ms"), error=row.get("error") or None))
            db.session.commit()
        except Exception as e:
            logger.error(f"Error recording experiment results: {e}")
            db.session.rollback()


def run_grid(cfg, cells, output_dir, workers=1, db_app=None):
    """Run every cell; rows come back in grid order and results.csv is rewritten after each cell."""
    os.makedirs(output_dir, exist_ok=True)
    csv_path = os.path.join(output_dir, "results.csv")
    done = {}

    def flush(index, rows):
        done[index] = rows
        merged = [row for i in sorted(done) for row in done[i]]
        rows_to_frame(merged).to_csv(csv_path, index=False)
        if db_app is not None:
            record_results(db_app, rows)

    logger.info(f"Running {len(cells)} cells with {workers} worker(s); results in {csv_path}")
    if workers <= 1:
        for cell in cells:
            flush(cell.index, run_cell(cfg.tree, cell, output_dir))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_cell, cfg.tree, cell, output_dir): cell for cell in cells}
            for future in as_completed(futures):
                flush(futures[future].index, future.result())
    return rows_to_frame([row for i in sorted(done) for row in done[i]])


def labeling_table(results):
    """One row per (window, rate): transition ratios and the per-frame minus per-sample F1 gap."""
    frame_rows = results[results["unit"] == "frame"]
    columns = ["window_s", "target_hz", "train_transition_ratio", "test_transition_ratio", "f1_gap"]
    return frame_rows[[c for c in columns if c in frame_rows.columns]].reset_index(drop=True)
