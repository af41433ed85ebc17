"""Attention-as-retrieval diagnostics.

Last-layer attention of a query row over the train rows is read as a
similarity distribution. From it we build an attention-weighted kNN
predictor, a normalized entropy per query, and the curve relating the
per-sample change in entropy to the per-sample change in error between a
base and a finetuned model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .data import Dataset
from .errors import ContractError
from .metrics import metric, per_sample_loss
from .model.pfn import AttentionRecord, ContextBatch, PFNParams, forward_with_attention, predict_proba
from .task import TaskType

ATTN_CHUNK = 512


@dataclass
class AttentionProfile:
    """Per-query attention over train rows, shape ``(n_test, n_train)``."""

    weights: np.ndarray
    source: str = "base"
    layer: int = -1
    head: int | None = None

    @property
    def n_train(self) -> int:
        return self.weights.shape[1]


def _renormalize(w: np.ndarray) -> np.ndarray:
    w = np.clip(w.astype(np.float64), 0.0, None)
    s = w.sum(axis=1, keepdims=True)
    return w / np.where(s > 0, s, 1.0)


def aggregate_heads(record: AttentionRecord, mode: str = "mean", source: str = "base"):
    """Head-mean profile (renormalized), or one profile per head with ``mode="per_head"``."""
    w = np.asarray(record.weights, dtype=np.float64)[:, : record.n_train, :]
    if mode == "mean":
        return AttentionProfile(_renormalize(w.mean(axis=2)), source)
    if mode == "per_head":
        return [AttentionProfile(_renormalize(w[:, :, h]), source, head=h) for h in range(w.shape[2])]
    raise ContractError(f"unknown head aggregation mode {mode!r}")


def attention_weighted_knn(
    profile: AttentionProfile, y_train, task, n_classes: int | None = None
) -> np.ndarray:
    """Attention-weighted prediction per query row.

    Regression combines z-scored train targets and maps the result back to
    the target scale. Classification accumulates attention per train label
    and returns the resulting class-probability rows.
    """
    task = TaskType(task)
    w = np.asarray(profile.weights, dtype=np.float64)
    y = np.asarray(y_train)
    if y.shape[0] != w.shape[1]:
        raise ContractError(f"{y.shape[0]} train targets for a profile over {w.shape[1]} rows")
    if task is TaskType.REGRESSION:
        y = y.astype(np.float64)
        mu, sd = y.mean(), y.std()
        scale = sd if sd > 1e-12 else 1.0
        z = (y - mu) / scale
        return (w @ z) * scale + mu
    lab = y.astype(np.int64)
    C = int(n_classes) if n_classes else int(lab.max()) + 1
    onehot = np.zeros((lab.size, C))
    onehot[np.arange(lab.size), lab] = 1.0
    return w @ onehot


def normalized_entropy(profile: AttentionProfile) -> np.ndarray:
    """Shannon entropy of each query's weights divided by ``ln(n_train)``."""
    n = profile.n_train
    if n < 2:
        raise ContractError("normalized entropy is undefined for a single train row")
    w = np.asarray(profile.weights, dtype=np.float64)
    logs = np.log(np.where(w > 0, w, 1.0))
    return -(w * logs).sum(axis=1) / np.log(n)


def per_sample_error(predictions, targets, task) -> np.ndarray:
    """Squared error (regression) or clamped log-loss (classification) per sample."""
    return per_sample_loss(predictions, targets, task)


@dataclass
class EntropyErrorCurve:
    order: np.ndarray
    delta_H: np.ndarray
    delta_error: np.ndarray
    smoothed_delta_error: np.ndarray
    zero_crossing_index: int
    sigma: float


def smoothing_sigma(n: int) -> float:
    return float(max(2, round(0.02 * n)))


def curve_from_deltas(delta_H, delta_error, sigma: float | None = None) -> EntropyErrorCurve:
    """Sort by entropy change (ties by index) and smooth the error change."""
    dH = np.asarray(delta_H, dtype=np.float64)
    dE = np.asarray(delta_error, dtype=np.float64)
    if dH.size == 0:
        raise ContractError("entropy/error curve of an empty test set")
    if dH.shape != dE.shape:
        raise ContractError("delta_H and delta_error must align")
    order = np.argsort(dH, kind="stable")
    sH, sE = dH[order], dE[order]
    sigma = smoothing_sigma(dH.size) if sigma is None else float(sigma)
    smooth = gaussian_filter1d(sE, sigma, mode="reflect") if sigma > 0 else sE.copy()
    pos = np.flatnonzero(sH > 0)
    zero = int(pos[0]) if pos.size else int(dH.size)
    return EntropyErrorCurve(order, sH, sE, smooth, zero, sigma)


@dataclass
class ModelProbe:
    """What one model says about a split: predictions, attention profile, per-sample error."""

    predictions: np.ndarray
    profile: AttentionProfile
    entropy: np.ndarray
    error: np.ndarray


def probe(params: PFNParams, dataset: Dataset, split: str = "test", source: str = "base") -> ModelProbe:
    X, y = dataset.part(split)
    if X.shape[0] == 0:
        raise ContractError(f"split {split!r} is empty")
    Xtr, ytr = dataset.part("train")
    preds, weights = [], []
    for s in range(0, X.shape[0], ATTN_CHUNK):
        b = ContextBatch(Xtr, ytr, X[s : s + ATTN_CHUNK], dataset.task_type, dataset.n_classes)
        out, rec = forward_with_attention(params, b)
        preds.append(out)
        weights.append(rec.weights)
    out = np.concatenate(preds, axis=0)
    rec = AttentionRecord(np.concatenate(weights, axis=0), Xtr.shape[0])
    if dataset.task_type is TaskType.CLASSIFICATION:
        out = predict_proba(out)[:, : dataset.n_classes]
    else:
        out = out.astype(np.float64)
    profile = aggregate_heads(rec, source=source)
    return ModelProbe(out, profile, normalized_entropy(profile), per_sample_error(out, y, dataset.task_type))


def entropy_error_curve(model_base: PFNParams, model_ft: PFNParams, dataset: Dataset, split: str = "test", sigma=None):
    """Per-sample entropy and error changes (finetuned minus base), sorted by entropy change.

    Returns ``(curve, base_probe, ft_probe)``.
    """
    pb = probe(model_base, dataset, split, "base")
    pf = probe(model_ft, dataset, split, "finetuned")
    return curve_from_deltas(pf.entropy - pb.entropy, pf.error - pb.error, sigma), pb, pf


def quartile_delta_error(curve: EntropyErrorCurve) -> float:
    """Mean error change over the quarter of samples whose entropy fell the most."""
    k = max(1, curve.delta_H.size // 4)
    return float(np.mean(curve.delta_error[:k]))


def knn_row(model_base: PFNParams, model_ft: PFNParams, dataset: Dataset, split: str = "test") -> dict:
    """Model metric and attention-kNN metric for the base and finetuned model on one dataset."""
    _, y = dataset.part(split)
    _, ytr = dataset.part("train")
    row = {"dataset": dataset.name, "metric": "accuracy" if dataset.task_type is TaskType.CLASSIFICATION else "rmse"}
    for tag, params in (("base", model_base), ("ft", model_ft)):
        p = probe(params, dataset, split, tag)
        knn = attention_weighted_knn(p.profile, ytr, dataset.task_type, dataset.n_classes)
        row[f"model_{tag}"] = metric(p.predictions, y, dataset.task_type)[0]
        row[f"knn_{tag}"] = metric(knn, y, dataset.task_type)[0]
    return row


def knn_report(model_base, model_ft, datasets: list[Dataset], split: str = "test") -> list[dict]:
    """One row per dataset: model and attention-kNN metrics, without and with finetuning.

    ``model_ft`` may be a single model or a ``{dataset name: model}`` map.
    """
    rows = []
    for ds in datasets:
        ft = model_ft[ds.name] if isinstance(model_ft, dict) else model_ft
        rows.append(knn_row(model_base, ft, ds, split))
    return rows


# ------------------------------------------------------------------ CSV


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


KNN_COLUMNS = ["dataset", "metric", "model_base", "model_ft", "knn_base", "knn_ft"]
HIST_COLUMNS = ["dataset", "test_index", "H_base", "H_ft"]
CURVE_COLUMNS = ["dataset", "sorted_position", "test_index", "delta_H", "delta_error", "smoothed"]


def write_knn_report(path, rows: list[dict]) -> Path:
    return write_csv(path, KNN_COLUMNS, ([r[c] for c in KNN_COLUMNS] for r in rows))


def entropy_hist_rows(name: str, base: ModelProbe, ft: ModelProbe):
    return [(name, i, hb, hf) for i, (hb, hf) in enumerate(zip(base.entropy, ft.entropy))]


def curve_rows(name: str, curve: EntropyErrorCurve):
    return [
        (name, pos, int(idx), dh, de, sm)
        for pos, (idx, dh, de, sm) in enumerate(
            zip(curve.order, curve.delta_H, curve.delta_error, curve.smoothed_delta_error)
        )
    ]
