"""Confusion-matrix based evaluation: overall accuracy, sensitivity, specificity.

Sensitivity and specificity are one-vs-rest per class; multi-class results
report macro averages. A class absent from the ground truth has undefined
sensitivity: it is reported as NaN and excluded from the macro average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


class ConfusionMatrix:
    """counts[true_class][predicted_class], accumulated over update calls."""

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise ConfigError(f"confusion matrix needs >= 2 classes, got {num_classes}")
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @classmethod
    def from_counts(cls, counts) -> "ConfusionMatrix":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DimensionError(f"confusion counts must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise ConfigError("confusion counts must be nonnegative")
        cm = cls(counts.shape[0])
        cm.counts = counts.copy()
        return cm

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, true_labels, predicted) -> None:
        true_labels = np.asarray(true_labels, dtype=np.int64).ravel()
        predicted = np.asarray(predicted, dtype=np.int64).ravel()
        if true_labels.shape != predicted.shape:
            raise DimensionError("true/predicted label arrays differ in length")
        k = self.num_classes
        if np.any((true_labels < 0) | (true_labels >= k)) or np.any((predicted < 0) | (predicted >= k)):
            raise ConfigError(f"labels outside [0, {k})")
        np.add.at(self.counts, (true_labels, predicted), 1)


@dataclass
class MetricReport:
    oa: float
    per_class_se: np.ndarray     # NaN where the class has no ground-truth support
    per_class_sp: np.ndarray
    se_macro: float
    sp_macro: float


def evaluate_metrics(cm: ConfusionMatrix) -> MetricReport:
    """OA = trace/total; per-class one-vs-rest Se = TP/(TP+FN), Sp = TN/(TN+FP)."""
    total = cm.total
    if total <= 0:
        raise ConfigError("evaluate_metrics: empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    support = counts.sum(axis=1)            # TP + FN
    predicted = counts.sum(axis=0)          # TP + FP
    fn = support - tp
    fp = predicted - tp
    tn = total - tp - fn - fp

    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.where(support > 0, tp / np.maximum(support, 1), np.nan)
        negatives = tn + fp
        sp = np.where(negatives > 0, tn / np.maximum(negatives, 1), np.nan)

    def macro(values: np.ndarray) -> float:
        finite = values[np.isfinite(values)]
        return float(finite.mean()) if finite.size else float("nan")

    return MetricReport(
        oa=float(tp.sum() / total),
        per_class_se=se,
        per_class_sp=sp,
        se_macro=macro(se),
        sp_macro=macro(sp),
    )
