import os
import sys

# BLAS threads must be pinned before numpy loads
if "--single-threaded" in sys.argv:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = "1"

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from cache import ChannelCache  # noqa: E402
from checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from config import CACHE_DIR, MODE_NAMES, SWEEP_WINDOWS  # noqa: E402
from database import create_db_app, resolve_database_url  # noqa: E402
from dsp import build_channel_stack  # noqa: E402
from errors import PipelineError  # noqa: E402
from experiments import ABLATION_MODES, ablation_grid, labeling_grid, labeling_table, run_grid, sweep_grid  # noqa: E402
from fpbilstm import predict, summarize  # noqa: E402
from ingest import ShlManifest, load_shl, reframe, write_shl  # noqa: E402
from metrics import frame_report, per_sample_report  # noqa: E402
from pipeline import load_split  # noqa: E402
from run_config import load_run_config  # noqa: E402
from trainer import evaluate_loss_accuracy, fit, stratified_split  # noqa: E402

logger = logging.getLogger(__name__)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _setup_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s', force=True)


def _load_config(args):
    overrides = list(args.set or [])
    if args.output:
        overrides.append(f"output={json.dumps(args.output)}")
    if args.workers:
        overrides.append(f"workers={args.workers}")
    if args.single_threaded:
        overrides.append("workers=1")
    return load_run_config(args.config, overrides)


def _db_app(cfg):
    return create_db_app(resolve_database_url(cfg.database_url, cfg.output))


def _has_test_split(cfg):
    return cfg.data.source == "synth" or bool(cfg.data.test_dir)


def _cache(cfg, db_app):
    return ChannelCache(os.path.join(cfg.output, "cache") if cfg.output else CACHE_DIR, db_app)


def _config_for_checkpoint(cfg, checkpoint):
    """The run config with the data settings a checkpoint was trained under."""
    return cfg.derive({
        "features": {"channels": list(checkpoint.feature_config.channels),
                     "smoothing_m": checkpoint.feature_config.smoothing_m},
        "window_s": checkpoint.window_s,
        "target_hz": checkpoint.target_hz,
    })


def cmd_synth(cfg, args):
    out = args.out or os.path.join(cfg.output, "synth")
    for split in ("train", "test"):
        write_shl(load_split(cfg.derive({"data": {"source": "synth"}}), split), os.path.join(out, split))
    logger.info(f"Synthetic SHL-layout data written to {out}")
    return 0


def cmd_preprocess(cfg, args):
    cache = _cache(cfg, _db_app(cfg))
    if args.purge:
        cache.purge()
    splits = ["train", "test"] if _has_test_split(cfg) else ["train"]
    for split in splits:
        stack, _ = cache.get_or_build(cfg, split)
        logger.info(f"{split}: {len(stack)} channel sets of length {stack.length}")
    logger.info(f"Cache hit rate: {cache.hit_rate:.0f}% ({cache.hits} hits, {cache.misses} misses)")
    return 0


def cmd_train(cfg, args):
    db_app = _db_app(cfg)
    cache = _cache(cfg, db_app)
    out_dir = os.path.join(cfg.output, "train")
    cfg.write_resolved(out_dir)
    train_stack, _ = cache.get_or_build(cfg, "train")
    test_stack = cache.get_or_build(cfg, "test")[0] if _has_test_split(cfg) else None

    runs = []
    for seed in cfg.seeds:
        seed_cfg = cfg.with_seed(seed)
        sub_train, sub_val = stratified_split(train_stack, seed_cfg.train.validation_fraction, seed)
        checkpoint, log = fit(sub_train, sub_val, seed_cfg.model, seed_cfg.train, seed_cfg.features,
                              seed_cfg.window_s, seed_cfg.target_hz)
        seed_dir = os.path.join(out_dir, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        path = save_checkpoint(checkpoint, os.path.join(seed_dir, "checkpoint.npz"))
        log.to_csv(os.path.join(seed_dir, "trainlog.csv"))
        run = {"seed": seed, "best_epoch": log.best.epoch, "epochs": len(log), "val_loss": log.best.val_loss,
               "val_acc": log.best.val_acc, "checkpoint": path}
        if test_stack is not None and test_stack.labels is not None:
            model = checkpoint.build_model()
            test_loss, _ = evaluate_loss_accuracy(model, test_stack, seed_cfg.train.batch_size)
            report = frame_report(test_stack.labels, predict(model.predict_proba(test_stack)))
            run.update({"test_loss": test_loss, "test_accuracy": report.accuracy, "test_macro_f1": report.macro_f1})
        runs.append(run)

    table = pd.DataFrame(runs)
    table["best_of_seeds"] = table["val_loss"] == table["val_loss"].min()
    table.to_csv(os.path.join(out_dir, "runs.csv"), index=False)
    logger.info(f"Trained {len(runs)} seed(s); summary in {os.path.join(out_dir, 'runs.csv')}")
    return 0


def cmd_eval(cfg, args):
    checkpoint = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(cfg, checkpoint)
    if not _has_test_split(cfg):
        raise PipelineError("Evaluation needs a test split (data.test_dir)")
    stack, _ = _cache(cfg, _db_app(cfg)).get_or_build(cfg, "test")
    if stack.labels is None:
        raise PipelineError("The test split has no labels to evaluate against")
    preds = predict(checkpoint.build_model().predict_proba(stack))
    out_dir = os.path.join(cfg.output, "eval")
    os.makedirs(out_dir, exist_ok=True)
    for report in (frame_report(stack.labels, preds), per_sample_report(stack.sample_labels, preds)):
        with open(os.path.join(out_dir, f"report_{report.unit}.json"), "w", encoding="utf-8") as handle:
            handle.write(report.to_json())
        print(report.to_text())
    cfg.write_resolved(out_dir)
    return 0


def cmd_predict(cfg, args):
    checkpoint = load_checkpoint(args.checkpoint)
    checkpoint.check_rate(cfg.data.native_rate_hz)
    ds = load_shl(args.input, "test", cfg.data.native_rate_hz, ShlManifest.from_dict(cfg.data.manifest),
                  require_labels=False)
    stack = build_channel_stack(reframe(ds, checkpoint.window_s), checkpoint.feature_config)
    probs = checkpoint.build_model().predict_proba(stack)
    table = pd.DataFrame(probs, columns=[f"p_{name}" for name in MODE_NAMES])
    ids = predict(probs)
    table.insert(0, "mode", [MODE_NAMES[i - 1] for i in ids])
    table.insert(0, "mode_id", ids)
    table.insert(0, "frame", np.arange(len(ids)))
    out = args.out or os.path.join(cfg.output, "predictions.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    table.to_csv(out, index=False)
    logger.info(f"Predicted {len(ids)} frames; written to {out}")
    return 0


def _run_experiment(cfg, cells, name):
    out_dir = os.path.join(cfg.output, name)
    cfg.write_resolved(out_dir)
    return run_grid(cfg, cells, out_dir, cfg.workers, _db_app(cfg)), out_dir


def _grid_status(results, name):
    """1 if any cell failed; rows were already flushed by run_grid."""
    failed = results.loc[results["error"].fillna("").astype(bool), "label"].tolist()
    if failed:
        logger.error(f"{name}: {len(failed)} cell(s) failed: {', '.join(map(str, failed))}")
        return 1
    return 0


def cmd_sweep(cfg, args):
    results, _ = _run_experiment(cfg, sweep_grid(args.windows, args.rates), "sweep")
    return _grid_status(results, "sweep")


def cmd_ablate(cfg, args):
    results, _ = _run_experiment(cfg, ablation_grid(args.mode, cfg), f"ablate_{args.mode}")
    return _grid_status(results, f"ablate_{args.mode}")


def cmd_labeling(cfg, args):
    results, out_dir = _run_experiment(cfg, labeling_grid(args.windows, args.rates, cfg), "labeling")
    table = labeling_table(results)
    table.to_csv(os.path.join(out_dir, "labeling.csv"), index=False)
    print(table.to_string(index=False))
    return _grid_status(results, "labeling")


def cmd_summarize(cfg, args):
    summary = summarize(cfg.model, int(round(cfg.window_s * cfg.target_hz)))
    print(summary.to_text())
    os.makedirs(cfg.output, exist_ok=True)
    with open(os.path.join(cfg.output, "summary.json"), "w", encoding="utf-8") as handle:
        json.dump({"parameter_count": summary.parameter_count, "non_trainable_count": summary.non_trainable_count,
                   "input_length": summary.input_length, "tap_lengths": summary.tap_lengths,
                   "tap_widths": summary.tap_widths, "macs": summary.macs}, handle, indent=2)
    return 0


def cmd_serve(cfg, args):
    from app import create_app
    app = create_app(args.checkpoint)
    logger.info(f"Serving {args.checkpoint} on port {args.port}...")
    app.run(host=args.host, port=args.port, debug=False, threaded=True)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "labeling": cmd_labeling,
    "summarize": cmd_summarize,
    "serve": cmd_serve,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fpbilstm", description="Feature-pyramid CNN/biLSTM transportation mode detection")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
    parser.add_argument("--output", help="output directory (overrides config 'output')")
    parser.add_argument("--workers", type=int, help="parallel worker processes for sweeps and ablations")
    parser.add_argument("--single-threaded", action="store_true", help="one BLAS thread and one worker; bitwise reproducible")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic train/test splits in SHL layout")
    p.add_argument("--out", help="target directory (default <output>/synth)")

    p = sub.add_parser("preprocess", help="build and cache model channels")
    p.add_argument("--purge", action="store_true", help="drop every cache entry first")

    sub.add_parser("train", help="train one model per configured seed")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("predict", help="predict modes for an SHL-layout directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="train and evaluate every (window, rate) pair")
    p.add_argument("--windows", type=_floats, default=list(SWEEP_WINDOWS))
    p.add_argument("--rates", type=_floats, required=True)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--mode", choices=ABLATION_MODES, required=True)

    p = sub.add_parser("labeling", help="per-frame vs per-sample F1 across window lengths")
    p.add_argument("--windows", type=_floats, default=list(SWEEP_WINDOWS))
    p.add_argument("--rates", type=_floats)

    sub.add_parser("summarize", help="print the model's layer table and parameter count")

    p = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=5000)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging(args)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg, args)
    except PipelineError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
