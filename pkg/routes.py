import logging

import numpy as np
from flask import Blueprint, current_app, jsonify, request

from config import AXES, MAX_PREDICT_FRAMES, MODE_NAMES, NATIVE_RATE_HZ, SENSORS
from dsp import build_channel_stack
from errors import PipelineError
from fpbilstm import predict
from ingest import Dataset, RawFrame, reframe

logger = logging.getLogger(__name__)

api_bp = Blueprint("api", __name__, url_prefix="/api")


def _state():
    return current_app.extensions["fpbilstm"]


def _parse_frames(payload, default_rate_hz=NATIVE_RATE_HZ):
    """{"sample_rate_hz": 100, "frames": [{"A": {"x": [...], "y": [...], "z": [...]}, ...}]} -> Dataset"""
    if not isinstance(payload, dict) or not isinstance(payload.get("frames"), list) or not payload["frames"]:
        raise PipelineError("Request body must be JSON with a non-empty 'frames' list")
    if len(payload["frames"]) > MAX_PREDICT_FRAMES:
        raise PipelineError(f"At most {MAX_PREDICT_FRAMES} frames per request")
    try:
        rate = float(payload.get("sample_rate_hz", default_rate_hz))
    except (TypeError, ValueError):
        raise PipelineError("sample_rate_hz must be a number")
    if not np.isfinite(rate) or rate <= 0:
        raise PipelineError("sample_rate_hz must be positive")
    frames = []
    for index, raw in enumerate(payload["frames"]):
        if not isinstance(raw, dict):
            raise PipelineError(f"Frame {index} must be an object keyed by sensor")
        samples = {}
        for sensor in SENSORS:
            axes = raw.get(sensor)
            if axes is None:
                continue
            for axis in AXES:
                if axis not in axes:
                    raise PipelineError(f"Frame {index}: sensor {sensor} lacks axis {axis}")
                try:
                    samples[(sensor, axis)] = np.asarray(axes[axis], dtype=np.float64)
                except (TypeError, ValueError):
                    raise PipelineError(f"Frame {index}: {sensor}_{axis} must be a list of numbers")
        frames.append(RawFrame(samples, rate))
    return Dataset(frames, "test")


@api_bp.route('/health', methods=['GET'])
def health():
    return jsonify({"status": "ok", "checkpoint": current_app.config["CHECKPOINT_PATH"]})


@api_bp.route('/summary', methods=['GET'])
def summary():
    state = _state()
    checkpoint, model_summary = state["checkpoint"], state["summary"]
    return jsonify({
        "window_s": checkpoint.window_s,
        "target_hz": checkpoint.target_hz,
        "channels": list(checkpoint.feature_config.channels),
        "model_config": checkpoint.model_config.to_dict(),
        "parameter_count": model_summary.parameter_count,
        "tap_lengths": {str(k): v for k, v in model_summary.tap_lengths.items()},
        "metadata": checkpoint.metadata,
    })


@api_bp.route('/predict', methods=['POST'])
def predict_modes():
    """Classify raw native-rate frames; each frame may span several model windows."""
    try:
        state = _state()
        checkpoint = state["checkpoint"]
        raw = _parse_frames(request.get_json(silent=True), checkpoint.native_rate_hz)
        checkpoint.check_rate(raw.frames[0].sample_rate_hz)
        ds = reframe(raw, checkpoint.window_s)
        stack = build_channel_stack(ds, checkpoint.feature_config)
        probs = state["model"].predict_proba(stack)
        ids = predict(probs)
        return jsonify({"predictions": [
            {"mode_id": int(mode_id), "mode": MODE_NAMES[mode_id - 1],
             "probabilities": dict(zip(MODE_NAMES, map(float, row)))}
            for mode_id, row in zip(ids, probs)
        ]})
    except PipelineError as e:
        logger.warning(f"Rejected prediction request: {e}")
        return jsonify({"error": str(e)}), 400
    except Exception as e:
        logger.error(f"Error in prediction: {e}")
        return jsonify({"error": "An error occurred while processing your request."}), 500
