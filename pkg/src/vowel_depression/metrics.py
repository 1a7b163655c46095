"""Per-class precision/recall/F1 with macro averages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import precision_recall_fscore_support


@dataclass(frozen=True)
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))


def class_metrics(y_true, y_pred, n_classes: int) -> ClassMetrics:
    """Metrics for every class in ``range(n_classes)``; 0/0 counts as 0.

    With no samples at all every metric is NaN.
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        nan = np.full(n_classes, np.nan)
        return ClassMetrics(nan, nan.copy(), nan.copy(), np.zeros(n_classes, dtype=int))
    p, r, f, s = precision_recall_fscore_support(
        y_true, y_pred, labels=np.arange(n_classes), zero_division=0
    )
    return ClassMetrics(p, r, f, s)


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    return class_metrics(y_true, y_pred, n_classes).macro_f1
