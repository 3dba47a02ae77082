"""Regression error and QoS-violation classification metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from ..validation import check_same_length

THRESHOLDS = (0.05, 0.10, 0.15, 0.20)


def mae(y, y_hat) -> float:
    y, y_hat = check_same_length(y, y_hat)
    if y.size == 0:
        raise ValueError("MAE of an empty set")
    return float(np.mean(np.abs(y - y_hat)))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        if self.tp + self.fp == 0:
            return 1.0 if self.fn == 0 else 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        if self.tp + self.fn == 0:
            return 1.0 if self.fp == 0 else 0.0
        return self.tp / (self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    @property
    def accuracy(self) -> float:
        n = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / n if n else 1.0

    def scores(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "accuracy": self.accuracy}


def violations(d, threshold) -> np.ndarray:
    """A sample violates its QoS target when its degradation strictly exceeds ``threshold``."""
    return np.asarray(d, dtype=np.float64) > threshold


def confusion(d, d_hat, threshold) -> Confusion:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    d, d_hat = check_same_length(d, d_hat)
    t, p = violations(d, threshold), violations(d_hat, threshold)
    return Confusion(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)),
                     int(np.sum(t & ~p)))


def qos_confusion(d, d_hat, threshold) -> dict:
    """Precision, recall, F1 and accuracy of violation detection at ``threshold``.

    With no actual and no predicted violations, precision and recall are 1.
    """
    return confusion(d, d_hat, threshold).scores()


def threshold_sweep(d, d_hat, thresholds=THRESHOLDS):
    """One row of confusion scores per threshold, plus the max - min volatility per score."""
    rows = []
    for thr in thresholds:
        c = confusion(d, d_hat, thr)
        rows.append({"threshold": thr, **c.scores(), **asdict(c)})
    table = pd.DataFrame(rows)
    cols = ["precision", "recall", "f1", "accuracy"]
    volatility = (table[cols].max() - table[cols].min()).to_dict()
    return table, volatility
