"""Accuracy and support-weighted precision / recall / F1 (percentages)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray

    def row(self):
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def confusion_matrix(y_true, y_pred, n_classes):
    """``cm[i, j]`` counts true class i predicted as j (0-based labels)."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def weighted_average(values, support):
    support = np.asarray(support, dtype=np.float64)
    return float((np.asarray(values, dtype=np.float64) * support).sum() / support.sum())


def per_class_scores(cm):
    """Precision, recall and F1 per class; 0 where undefined."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(pred > 0, tp / pred, 0.0)
        r = np.where(true > 0, tp / true, 0.0)
        f = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return p, r, f


def metrics_from_confusion(cm) -> Metrics:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise DataError("cannot score an empty set")
    support = cm.sum(axis=1)
    p, r, f = per_class_scores(cm)
    return Metrics(
        accuracy=100.0 * np.trace(cm) / total,
        precision=100.0 * weighted_average(p, support),
        recall=100.0 * weighted_average(r, support),
        f1=100.0 * weighted_average(f, support),
        confusion=cm,
    )


def compute_metrics(y_true, y_pred, n_classes) -> Metrics:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, n_classes))
