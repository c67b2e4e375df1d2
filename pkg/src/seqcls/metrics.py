"""Classification metrics from a confusion matrix.

Weighted averages use class supports n_j/N; macro averages divide by the
class count K.  The primary macro F1 is the harmonic mean of macro
precision and macro recall; the per-class-F1 average is reported as a
secondary figure since both conventions appear in the wild.  Classes
with a zero denominator score 0 rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class ConfusionMatrix:
    """counts[true][pred]; row sums are the class supports."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion matrix counts must be nonnegative")

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts)

    @property
    def false_positives(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.true_positives

    @property
    def false_negatives(self) -> np.ndarray:
        return self.supports - self.true_positives


@dataclass
class MetricsReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    supports: list[int]
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    f1_macro_per_class: float


def confusion(true_labels, predicted_labels, n_classes: int) -> ConfusionMatrix:
    true_labels = list(true_labels)
    predicted_labels = list(predicted_labels)
    if len(true_labels) != len(predicted_labels):
        raise DataError(
            f"{len(true_labels)} labels vs {len(predicted_labels)} predictions")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for y, y_hat in zip(true_labels, predicted_labels):
        if not 0 <= y < n_classes:
            raise DataError(f"label {y} outside {n_classes} classes")
        if not 0 <= y_hat < n_classes:
            raise DataError(f"prediction {y_hat} outside {n_classes} classes")
        counts[y, y_hat] += 1
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("empty confusion matrix has no accuracy")
    return float(cm.true_positives.sum()) / cm.total


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros(len(numerator), dtype=np.float64)
    mask = denominator > 0
    out[mask] = numerator[mask] / denominator[mask]
    return out


def per_class_metrics(cm: ConfusionMatrix):
    """(precision, recall, f1) arrays; zero-denominator classes score 0."""
    tp = cm.true_positives.astype(np.float64)
    precision = _ratio(tp, tp + cm.false_positives)
    recall = _ratio(tp, tp + cm.false_negatives)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    return precision, recall, f1


def weighted_metrics(cm: ConfusionMatrix):
    if cm.total == 0:
        raise DataError("empty confusion matrix has no weighted metrics")
    precision, recall, f1 = per_class_metrics(cm)
    weights = cm.supports / cm.total
    return (float(precision @ weights), float(recall @ weights),
            float(f1 @ weights))


def macro_metrics(cm: ConfusionMatrix):
    """Averages over classes; macro F1 is the harmonic mean of the two."""
    if cm.total == 0:
        raise DataError("empty confusion matrix has no macro metrics")
    precision, recall, _ = per_class_metrics(cm)
    p_macro = float(precision.mean())
    r_macro = float(recall.mean())
    denominator = p_macro + r_macro
    f1_macro = 0.0 if denominator == 0 else 2.0 * p_macro * r_macro / denominator
    return p_macro, r_macro, f1_macro


def report(true_labels, predicted_labels, n_classes: int) -> MetricsReport:
    cm = confusion(true_labels, predicted_labels, n_classes)
    precision, recall, f1 = per_class_metrics(cm)
    p_w, r_w, f1_w = weighted_metrics(cm)
    p_m, r_m, f1_m = macro_metrics(cm)
    return MetricsReport(
        accuracy=accuracy(cm),
        precision=[float(v) for v in precision],
        recall=[float(v) for v in recall],
        f1=[float(v) for v in f1],
        supports=[int(v) for v in cm.supports],
        precision_weighted=p_w,
        recall_weighted=r_w,
        f1_weighted=f1_w,
        precision_macro=p_m,
        recall_macro=r_m,
        f1_macro=f1_m,
        f1_macro_per_class=float(f1.mean()) if len(f1) else 0.0,
    )
