"""Confusion matrices and accuracy / precision / recall / F1."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .exceptions import EmptyMatrixError, ShapeMismatchError


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int) -> "ConfusionMatrix":
        y_true, y_pred = np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ShapeMismatchError(f"{y_true.shape} true labels vs {y_pred.shape} predictions")
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tolist(self) -> list:
        return self.counts.tolist()


def _div(num: int, den: int, exact: bool):
    # undefined ratios count as 0 so degenerate predictors stay comparable
    if den == 0:
        return Fraction(0) if exact else 0.0
    return Fraction(num, den) if exact else num / den


def _f1(pre, rec, exact: bool):
    if pre + rec == 0:
        return Fraction(0) if exact else 0.0
    return 2 * pre * rec / (pre + rec)


@dataclass
class MetricsReport:
    accuracy: float
    precision: list
    recall: list
    f1: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: ConfusionMatrix
    n: int

    def to_dict(self) -> dict:
        """JSON-ready summary; aggregate precision/recall/F1 are macro averages."""
        return {
            "acc": float(self.accuracy),
            "pre": float(self.macro_precision),
            "recall": float(self.macro_recall),
            "f1": float(self.macro_f1),
            "average": "macro",
            "per_class": {
                "precision": [float(v) for v in self.precision],
                "recall": [float(v) for v in self.recall],
                "f1": [float(v) for v in self.f1],
            },
            "confusion": self.confusion.tolist(),
            "n": self.n,
        }


def metrics_from_confusion(cm, exact: bool = False) -> MetricsReport:
    """One-vs-rest precision/recall/F1 per class, their macro means, and accuracy.

    With ``exact=True`` every ratio is a :class:`fractions.Fraction`.
    """
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.int64)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.size == 0:
        raise EmptyMatrixError(f"need a non-empty square matrix, got shape {counts.shape}")
    total = int(counts.sum())
    if total == 0:
        raise EmptyMatrixError("confusion matrix has no samples")
    K = counts.shape[0]
    pre, rec, f1 = [], [], []
    for k in range(K):
        tp = int(counts[k, k])
        fp = int(counts[:, k].sum()) - tp
        fn = int(counts[k, :].sum()) - tp
        p, r = _div(tp, tp + fp, exact), _div(tp, tp + fn, exact)
        pre.append(p)
        rec.append(r)
        f1.append(_f1(p, r, exact))
    macro = (lambda v: sum(v, Fraction(0)) / K) if exact else (lambda v: sum(v) / K)
    return MetricsReport(
        accuracy=_div(int(np.trace(counts)), total, exact),
        precision=pre, recall=rec, f1=f1,
        macro_precision=macro(pre), macro_recall=macro(rec), macro_f1=macro(f1),
        confusion=ConfusionMatrix(counts.copy()), n=total,
    )


def classification_report(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> MetricsReport:
    return metrics_from_confusion(ConfusionMatrix.from_predictions(y_true, y_pred, num_classes))
