import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DegenerateInputError, ShapeError, UndefinedMetricError

logger = logging.getLogger("metrics")

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class RocCurve:
    points: Tuple[Tuple[float, float], ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.points), columns=["fpr", "tpr"])


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    roc: Optional[RocCurve]
    ids: List[int] = field(default_factory=list)

    def scalars(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_dict(self):
        payload = {"counts": self.counts.to_dict(), **self.scalars()}
        payload["roc"] = [list(p) for p in self.roc.points] if self.roc is not None else None
        payload["n"] = self.counts.total
        return payload


def predict_label(probs) -> int:
    """Argmax over the two classes; a tie goes to class 0."""
    return 1 if probs[1] > probs[0] else 0


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    """Counts with class 1 (deceptive) as the positive class."""
    if len(predictions) != len(labels):
        raise ShapeError("confusion", (len(predictions),), (len(labels),))
    if len(labels) == 0:
        raise ShapeError("confusion", (0,))
    p = np.asarray(predictions, dtype=int)
    y = np.asarray(labels, dtype=int)
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
        tn=int(np.sum((p == 0) & (y == 0))),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2.0 * precision * recall, precision + recall)


def scalar_metrics(c: ConfusionCounts) -> Tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1); a zero denominator yields 0."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    accuracy = _ratio(c.tp + c.tn, c.total)
    return accuracy, precision, recall, f1_score(precision, recall)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> Tuple[RocCurve, float]:
    """ROC by a descending-score sweep where tied scores move as one step, and
    the trapezoidal area under it (equal to pairwise ranking with ties at 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise ShapeError("roc_auc", s.shape, y.shape)
    if not np.all(np.isfinite(s)) or np.any((s < 0.0) | (s > 1.0)):
        raise DegenerateInputError("roc_auc: scores must be finite probabilities in [0, 1]")
    positives = int(np.sum(y == 1))
    negatives = int(np.sum(y == 0))
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError("ROC needs both classes among the labels")

    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of every run of equal scores
    cuts = np.flatnonzero(np.diff(s) != 0)
    ends = np.append(cuts, len(s) - 1)
    tps = np.cumsum(y == 1)[ends]
    fps = np.cumsum(y == 0)[ends]
    tpr = np.concatenate(([0.0], tps / positives))
    fpr = np.concatenate(([0.0], fps / negatives))
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    points = tuple((float(a), float(b)) for a, b in zip(fpr, tpr))
    return RocCurve(points), auc


def evaluate_probabilities(probs: Sequence[Sequence[float]], labels: Sequence[int],
                           ids: Optional[Sequence[int]] = None) -> MetricsReport:
    predictions = [predict_label(p) for p in probs]
    counts = confusion(predictions, labels)
    accuracy, precision, recall, f1 = scalar_metrics(counts)
    try:
        roc, auc = roc_auc([p[1] for p in probs], labels)
    except UndefinedMetricError as e:
        logger.warning(f"AUC not reported: {e}")
        roc, auc = None, None
    return MetricsReport(counts, accuracy, precision, recall, f1, auc, roc, list(ids or []))


def aggregate(reports: List[MetricsReport]) -> Dict[str, Dict[str, Optional[float]]]:
    """Mean and population standard deviation of each metric across folds."""
    summary = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if values:
            summary[name] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
        else:
            summary[name] = {"mean": None, "std": None}
    return summary


def metric_correlation(reports: List[MetricsReport]) -> Dict[str, Dict[str, Optional[float]]]:
    """Pearson correlation between every pair of metrics across folds.

    Entries involving a metric with zero variance (or missing values) are None.
    """
    if len(reports) < 2:
        raise ShapeError("metric_correlation", (len(reports),))
    table = {name: [getattr(r, name) for r in reports] for name in METRIC_NAMES}
    usable = {
        name: np.asarray(values, dtype=np.float64)
        for name, values in table.items()
        if all(v is not None for v in values) and np.std(np.asarray(values, dtype=np.float64)) > 0
    }
    skipped = [name for name in METRIC_NAMES if name not in usable]
    if skipped:
        logger.warning(f"No correlation for zero-variance metrics: {', '.join(skipped)}")

    matrix: Dict[str, Dict[str, Optional[float]]] = {}
    for a in METRIC_NAMES:
        matrix[a] = {}
        for b in METRIC_NAMES:
            if a in usable and b in usable:
                value = 1.0 if a == b else float(np.corrcoef(usable[a], usable[b])[0, 1])
                matrix[a][b] = float(np.clip(value, -1.0, 1.0))
            else:
                matrix[a][b] = None
    return matrix
