"""Task metrics shared by training, analysis and reporting."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .task import TaskType

PROB_CLAMP = 1e-7


def metric(preds, targets, task) -> tuple[float, float]:
    """``(RMSE, R²)`` for regression, ``(accuracy, accuracy)`` for classification.

    Classification ``preds`` may be labels or probability rows. R² uses the
    targets' own total sum of squares and is 0 when that is 0.
    """
    task = TaskType(task)
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if targets.shape[0] == 0 or preds.shape[0] == 0:
        raise ContractError("metric of an empty prediction set")
    if preds.shape[0] != targets.shape[0]:
        raise ContractError(f"{preds.shape[0]} predictions for {targets.shape[0]} targets")
    if task is TaskType.REGRESSION:
        p = preds.astype(np.float64).reshape(-1)
        t = targets.astype(np.float64).reshape(-1)
        sse = float(np.sum((p - t) ** 2))
        sst = float(np.sum((t - t.mean()) ** 2))
        rmse = float(np.sqrt(sse / t.size))
        r2 = 1.0 - sse / sst if sst > 0 else 0.0
        return rmse, r2
    labels = preds.argmax(axis=-1) if preds.ndim == 2 else preds
    acc = float(np.mean(labels.astype(np.int64) == targets.astype(np.int64)))
    return acc, acc


def higher_is_better(task) -> bool:
    return TaskType(task) is TaskType.CLASSIFICATION


def is_better(a: float, b: float, task) -> bool:
    """Strictly better under the task's primary-metric direction."""
    return a > b if higher_is_better(task) else a < b


def per_sample_loss(preds, targets, task) -> np.ndarray:
    """Squared error per sample, or clamped negative log-likelihood of the true class."""
    task = TaskType(task)
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets)
    if preds.shape[0] != targets.shape[0]:
        raise ContractError(f"{preds.shape[0]} predictions for {targets.shape[0]} targets")
    if task is TaskType.REGRESSION:
        return (preds.reshape(-1) - targets.astype(np.float64).reshape(-1)) ** 2
    if preds.ndim != 2:
        raise ContractError("classification predictions must be probability rows")
    if np.any(preds < -1e-6) or not np.allclose(preds.sum(axis=1), 1.0, atol=1e-4):
        raise ContractError("classification predictions are not probability vectors")
    lab = targets.astype(np.int64)
    if np.any(lab < 0) or np.any(lab >= preds.shape[1]):
        raise ContractError("class label outside the probability vector")
    p = np.clip(preds[np.arange(lab.size), lab], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -np.log(p)


def mean_loss(preds, targets, task) -> float:
    """Mean per-sample loss: MSE or log-loss."""
    return float(np.mean(per_sample_loss(preds, targets, task)))
