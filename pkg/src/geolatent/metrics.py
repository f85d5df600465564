"""Evaluation metrics: R^2, RMSE, accuracy, F1, DICE.

Conventions: F1 treats label 1 as the positive class; DICE is the overlap
score 2|A&B| / (|A| + |B|) on binary masks and equals binary F1
algebraically. When both masks are empty (denominator zero) both scores
are defined as 1: two empty masks agree perfectly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError


@dataclass(frozen=True)
class EvalResult:
    metric: str
    value: float
    n_samples: int

    def as_dict(self) -> dict:
        return {"metric": self.metric, "value": self.value, "n_samples": self.n_samples}


def _paired(pred, target):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.size != target.size:
        raise InvalidInputError(f"length mismatch: {pred.size} vs {target.size}")
    if pred.size == 0:
        raise InvalidInputError("metrics need at least one sample")
    return pred, target


def r_squared(pred, target) -> float:
    """1 - SS_res / SS_tot, with SS_tot about the target mean."""
    pred, target = _paired(pred, target)
    ss_tot = float(((target - target.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 undefined for zero target variance")
    ss_res = float(((target - pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def rmse(pred, target) -> float:
    pred, target = _paired(pred, target)
    return float(np.sqrt(((pred - target) ** 2).mean()))


def accuracy(pred, target) -> float:
    """Fraction of exactly matching labels (binary or multiclass)."""
    pred = np.asarray(pred).ravel()
    target = np.asarray(target).ravel()
    if pred.size != target.size:
        raise InvalidInputError(f"length mismatch: {pred.size} vs {target.size}")
    if pred.size == 0:
        raise InvalidInputError("metrics need at least one sample")
    return float((pred == target).mean())


def f1(pred, target, positive=1) -> float:
    """Binary F1 with the given positive label; 1.0 if no positives exist anywhere."""
    pred = np.asarray(pred).ravel() == positive
    target = np.asarray(target).ravel() == positive
    if pred.size != target.size:
        raise InvalidInputError(f"length mismatch: {pred.size} vs {target.size}")
    tp = int(np.logical_and(pred, target).sum())
    denom = int(pred.sum()) + int(target.sum())
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def dice(pred_mask, target_mask) -> float:
    """2|A&B| / (|A| + |B|) on binary masks; 1.0 when both masks are empty."""
    a = np.asarray(pred_mask).astype(bool)
    b = np.asarray(target_mask).astype(bool)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / denom


METRIC_FUNCTIONS = {
    "r_squared": r_squared,
    "rmse": rmse,
    "accuracy": accuracy,
    "f1": f1,
    "dice": dice,
}
