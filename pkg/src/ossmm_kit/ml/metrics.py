"""Evaluation metrics: accuracy, zero-guarded macro F1, confusion
matrices, and the two trivial baselines every report is judged against.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadDistributionError, EmptyInputError, ValidationError
from ..model import CLASS_NAMES, EvaluationReport


def confusion_counts(y_true: np.ndarray, y_pred: np.ndarray,
                     n_classes: int) -> np.ndarray:
    """(n_classes, n_classes) counts, rows = true class, cols = predicted."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError(
            f"shape mismatch: {y_true.shape} labels vs {y_pred.shape} predictions")
    for arr, who in ((y_true, "labels"), (y_pred, "predictions")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValidationError(f"{who} outside 0..{n_classes - 1}")
    flat = y_true * n_classes + y_pred
    return np.bincount(flat, minlength=n_classes * n_classes) \
        .reshape(n_classes, n_classes)


def evaluate(y_true: np.ndarray, y_pred: np.ndarray,
             class_names: tuple[str, ...] = CLASS_NAMES) -> EvaluationReport:
    """Full report. Macro F1 averages over *all* classes in the class
    order; a class with no support and no predictions contributes 0
    rather than NaN, and is listed in zero_support_classes so readers
    know the average is diluted.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.size == 0:
        raise EmptyInputError("cannot evaluate zero epochs")
    k = len(class_names)
    counts = confusion_counts(y_true, y_pred, k)
    n = int(counts.sum())
    accuracy = float(np.trace(counts)) / n

    row_sums = counts.sum(axis=1)          # true support
    col_sums = counts.sum(axis=0)          # predicted support
    diag = np.diag(counts).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(row_sums > 0, diag / row_sums, 0.0)
        precision = np.where(col_sums > 0, diag / col_sums, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)

    norm = np.zeros_like(counts, dtype=np.float64)
    nz = row_sums > 0
    norm[nz] = counts[nz] / row_sums[nz, None]

    return EvaluationReport(
        class_order=tuple(class_names),
        n_epochs=n,
        accuracy=accuracy,
        macro_f1=float(f1.mean()),
        per_class_f1={name: float(f1[i]) for i, name in enumerate(class_names)},
        confusion_counts=counts.tolist(),
        confusion=norm.tolist(),
        zero_support_classes=[name for i, name in enumerate(class_names)
                              if row_sums[i] == 0],
    )


def _check_distribution(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.size == 0:
        raise BadDistributionError("empty class distribution")
    if np.any(dist < 0):
        raise BadDistributionError("class distribution has negative entries")
    if abs(float(dist.sum()) - 1.0) > 1e-6:
        raise BadDistributionError(
            f"class distribution sums to {dist.sum():.8f}, expected 1")
    return dist


def chance_accuracy(dist: np.ndarray) -> float:
    """Accuracy of a guesser that samples predictions from the class
    distribution itself: sum of squared proportions.
    """
    dist = _check_distribution(dist)
    return float(np.sum(dist * dist))


def majority_accuracy(dist: np.ndarray) -> float:
    """Accuracy of always predicting the most common class."""
    dist = _check_distribution(dist)
    return float(dist.max())


def class_distribution(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise EmptyInputError("no labels to build a distribution from")
    return np.bincount(y, minlength=n_classes) / y.size
