"""
Confusion matrices, per-class precision/recall/F1, accuracy and macro-F1.

Percentages keep full precision; rounding to one decimal happens only in the
text rendering. Classes without support are left out of the macro average.
"""
import json
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from config import MODE_NAMES, NUM_CLASSES
from errors import StructuralError

logger = logging.getLogger(__name__)

UNITS = ("frame", "sample")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions; index k holds mode id k + 1."""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise StructuralError(f"Confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise StructuralError("Confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def support(self):
        return self.counts.sum(axis=1)

    @property
    def predicted(self):
        return self.counts.sum(axis=0)

    @property
    def correct(self):
        return np.diag(self.counts)


def confusion(truth, pred, num_classes=NUM_CLASSES):
    truth = np.asarray(truth, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if truth.shape != pred.shape:
        raise StructuralError(f"Got {truth.size} ground-truth labels but {pred.size} predictions")
    for name, ids in (("ground-truth", truth), ("predicted", pred)):
        if ids.size and (ids.min() < 1 or ids.max() > num_classes):
            raise StructuralError(f"{name} mode ids must lie in 1..{num_classes}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth - 1, pred - 1), 1)
    return ConfusionMatrix(counts)


def _ratio(numerator, denominator):
    out = np.zeros(numerator.shape, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return 100.0 * out


def per_class(cm):
    """(precision, recall, f1) in percent; 0 where a denominator is 0."""
    precision = _ratio(cm.correct, cm.predicted)
    recall = _ratio(cm.correct, cm.support)
    denom = precision + recall
    f1 = np.zeros_like(precision)
    np.divide(2.0 * precision * recall, denom, out=f1, where=denom > 0)
    return precision, recall, f1


def accuracy(cm):
    if cm.total == 0:
        raise StructuralError("Accuracy of an empty confusion matrix is undefined")
    return 100.0 * cm.correct.sum() / cm.total


def macro_f1(cm):
    present = cm.support > 0
    if not np.any(present):
        raise StructuralError("Macro-F1 needs at least one class with support")
    return float(per_class(cm)[2][present].mean())


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_f1: float
    unit: str = "frame"

    def to_dict(self):
        return {
            "unit": self.unit,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "classes": list(MODE_NAMES[:len(self.f1)]),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.confusion.support.tolist(),
            "confusion": self.confusion.counts.tolist(),
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def to_frame(self):
        names = list(MODE_NAMES[:len(self.f1)])
        table = pd.DataFrame(self.confusion.counts, index=names, columns=names).astype(object)
        for label, values in (("Recall", self.recall), ("Precision", self.precision), ("F1-score", self.f1)):
            table.loc[label] = [f"{v:.1f}" for v in values]
        return table

    def to_text(self):
        header = (f"Per-{self.unit} evaluation: accuracy {self.accuracy:.1f}%, "
                  f"macro-F1 {self.macro_f1:.1f}% over {self.confusion.total} {self.unit}s")
        return f"{header}\n{self.to_frame().to_string()}"


def report_from_confusion(cm, unit="frame"):
    if unit not in UNITS:
        raise StructuralError(f"Unknown evaluation unit {unit!r}")
    precision, recall, f1 = per_class(cm)
    return EvalReport(cm, precision, recall, f1, accuracy(cm), macro_f1(cm), unit)


def frame_report(truth, pred):
    return report_from_confusion(confusion(truth, pred), "frame")


def _sample_labels(frames):
    if hasattr(frames, "frames"):
        frames = [f.labels for f in frames.frames]
    labels = [np.asarray(f.labels if hasattr(f, "labels") else f) for f in frames]
    if any(lab is None or lab.dtype == object for lab in labels):
        raise StructuralError("Per-sample evaluation needs per-sample labels on every frame")
    return labels


def per_sample_report(frames, frame_preds):
    """Broadcast each frame's prediction to its samples and score the samples."""
    labels = _sample_labels(frames)
    frame_preds = np.asarray(frame_preds, dtype=np.int64)
    if len(labels) != frame_preds.size:
        raise StructuralError(f"Got {len(labels)} frames but {frame_preds.size} predictions")
    truth = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    pred = np.repeat(frame_preds, [lab.size for lab in labels])
    return report_from_confusion(confusion(truth, pred), "sample")


def f1_gap(frame, sample):
    """Per-frame minus per-sample macro-F1, in percentage points."""
    return frame.macro_f1 - sample.macro_f1
