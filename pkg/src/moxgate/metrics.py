from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows = true class, columns = predicted class
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def row(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.weighted_precision,
            "recall": self.weighted_recall,
            "f1": self.weighted_f1,
        }

    def to_dict(self, class_names=None) -> dict:
        names = list(class_names) if class_names is not None else [str(i) for i in range(len(self.support))]
        return {
            **self.row(),
            "total": int(self.total),
            "per_class": {
                n: {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
                for n, p, r, f, s in zip(names, self.precision, self.recall, self.f1, self.support)
            },
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics_report(y_true, y_pred, num_classes: int) -> MetricsReport:
    """Per-class and support-weighted precision/recall/F1.

    Undefined ratios (empty denominators) count as 0.
    """
    cm = confusion_matrix(y_true, y_pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1)
    precision = _safe_ratio(tp, predicted)
    recall = _safe_ratio(tp, support.astype(np.float64))
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    total = cm.sum()
    w = support / total if total else np.zeros(num_classes)
    return MetricsReport(
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=float(tp.sum() / total) if total else 0.0,
        weighted_precision=float(np.dot(w, precision)),
        weighted_recall=float(np.dot(w, recall)),
        weighted_f1=float(np.dot(w, f1)),
    )
