"""Segmentation scoring and posterior summaries.

Dice overlap per label, overall misclassification, confusion counts, the
shortest (highest-posterior-density) interval of a sample trace, and paired
difference summaries for comparing model variants scan by scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .io import write_csv
from .potts import LabelField

__all__ = [
    "ScoreReport",
    "dice",
    "misclassification",
    "confusion_counts",
    "score_report",
    "hpd_interval",
    "paired_difference_summary",
    "save_score_report",
    "save_confusion",
]


@dataclass(frozen=True)
class ScoreReport:
    """Per-label Dice, overall misclassification, and the confusion matrix."""

    dice: np.ndarray  # (k,)
    misclassification: float
    confusion: np.ndarray  # (k, k); rows = truth, columns = predicted

    @property
    def k(self) -> int:
        return self.dice.size


def _check_same_shape(predicted: LabelField, truth: LabelField) -> None:
    if predicted.n != truth.n:
        raise DataError(
            f"predicted field has {predicted.n} sites, truth has {truth.n}"
        )


def dice(predicted: LabelField, truth: LabelField, j: int) -> float:
    """2 |pred_j & true_j| / (|pred_j| + |true_j|).

    Both sets empty scores 1; exactly one empty scores 0.
    """
    _check_same_shape(predicted, truth)
    pred_j = predicted.labels == j
    true_j = truth.labels == j
    denom = int(pred_j.sum()) + int(true_j.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pred_j & true_j)) / denom


def misclassification(predicted: LabelField, truth: LabelField) -> float:
    """Fraction of sites whose predicted label differs from the truth."""
    _check_same_shape(predicted, truth)
    return float(np.count_nonzero(predicted.labels != truth.labels)) / truth.n


def confusion_counts(predicted: LabelField, truth: LabelField) -> np.ndarray:
    _check_same_shape(predicted, truth)
    k = max(predicted.k, truth.k)
    flat = (truth.labels - 1) * k + (predicted.labels - 1)
    return np.bincount(flat, minlength=k * k).reshape(k, k)


def score_report(predicted: LabelField, truth: LabelField) -> ScoreReport:
    k = max(predicted.k, truth.k)
    return ScoreReport(
        dice=np.array([dice(predicted, truth, j) for j in range(1, k + 1)]),
        misclassification=misclassification(predicted, truth),
        confusion=confusion_counts(predicted, truth),
    )


def hpd_interval(samples, level: float) -> tuple[float, float]:
    """Shortest contiguous interval containing ceil(level * N) sorted samples."""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    arr = np.sort(np.asarray(samples, dtype=np.float64))
    if arr.size == 0:
        raise DataError("cannot form an interval from an empty sample")
    if arr.size < 2:
        raise DataError("need at least 2 samples for an interval")
    m = min(max(int(math.ceil(level * arr.size)), 1), arr.size)
    widths = arr[m - 1 :] - arr[: arr.size - m + 1]
    best = int(np.argmin(widths))
    return float(arr[best]), float(arr[best + m - 1])


def paired_difference_summary(scores_a, scores_b) -> tuple[float, float]:
    """Mean and sample SD of a - b over paired runs."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"paired scores must match in length, got {a.shape}, {b.shape}")
    if a.size == 0:
        raise DataError("paired summary needs at least one pair")
    d = a - b
    sd = float(d.std(ddof=1)) if d.size > 1 else 0.0
    return float(d.mean()), sd


def save_score_report(
    path: str | Path,
    report: ScoreReport,
    label_names: tuple[str, ...] | None = None,
) -> None:
    """Long-form CSV: one dice row per label plus one misclassification row."""
    names = label_names or tuple(str(j + 1) for j in range(report.k))
    rows = [
        {
            "metric": "dice",
            "label": j + 1,
            "name": names[j] if j < len(names) else str(j + 1),
            "value": float(report.dice[j]),
        }
        for j in range(report.k)
    ]
    rows.append(
        {
            "metric": "misclassification",
            "label": "",
            "name": "overall",
            "value": report.misclassification,
        }
    )
    write_csv(path, ["metric", "label", "name", "value"], rows)


def save_confusion(path: str | Path, report: ScoreReport) -> None:
    """Square CSV of confusion counts; row = true label, column = predicted."""
    k = report.k
    names = ["true_label"] + [f"pred_{j + 1}" for j in range(k)]
    rows = [
        {"true_label": i + 1, **{f"pred_{j + 1}": int(report.confusion[i, j]) for j in range(k)}}
        for i in range(k)
    ]
    write_csv(path, names, rows)
