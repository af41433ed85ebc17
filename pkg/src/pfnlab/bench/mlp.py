"""Tuned MLP baseline: two ReLU layers of 256 units, best of a small LR grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import diffengine as de
from ..data import Dataset
from ..errors import BaselineError, DivergenceError
from ..metrics import is_better, metric
from ..rng import stream
from ..task import TaskType

MLP_LRS = (1e-4, 3e-4, 1e-3)


@dataclass(frozen=True)
class MLPConfig:
    hidden: int = 256
    dropout: float = 0.1
    batch_size: int = 256
    eval_every: int = 10
    patience: int = 16
    max_steps: int = 2000
    lrs: tuple[float, ...] = MLP_LRS


def _init(n_in: int, n_out: int, hidden: int, seed: int) -> de.ParamStore:
    rng = stream(seed, "mlp-init")
    p = de.ParamStore()
    dims = [n_in, hidden, hidden, n_out]
    for i in range(3):
        p.add(f"W{i}", rng.standard_normal((dims[i], dims[i + 1])) / math.sqrt(max(dims[i], 1)))
        p.add(f"b{i}", np.zeros(dims[i + 1]))
    return p


def _forward(p: de.ParamStore, X: np.ndarray, drop: float, rng) -> de.Tensor:
    h = de.Tensor(X)
    for i in range(3):
        h = de.matmul(h, p.tensor(f"W{i}")) + p.tensor(f"b{i}")
        if i < 2:
            h = de.dropout(de.relu(h), drop, rng)
    return h


def _predict(p, X, task, y_mu, y_sd, n_classes):
    out = _forward(p, X, 0.0, None).data.astype(np.float64)
    if task is TaskType.REGRESSION:
        return out[:, 0] * y_sd + y_mu
    z = out[:, :n_classes]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _fit(ds: Dataset, lr: float, seed: int, cfg: MLPConfig):
    task = ds.task_type
    Xtr, ytr = ds.part("train")
    Xva, yva = ds.part("val")
    n_out = 1 if task is TaskType.REGRESSION else ds.n_classes
    y_mu = float(ytr.mean()) if task is TaskType.REGRESSION else 0.0
    y_sd = float(ytr.std()) if task is TaskType.REGRESSION else 1.0
    y_sd = y_sd if y_sd > 1e-12 else 1.0
    p = _init(Xtr.shape[1], n_out, cfg.hidden, seed)
    best_val = metric(_predict(p, Xva, task, y_mu, y_sd, n_out), yva, task)[0]
    best = p.snapshot()
    stale = 0
    bs = min(cfg.batch_size, Xtr.shape[0])
    for step in range(1, cfg.max_steps + 1):
        rng = stream(seed, "mlp-step", step)
        idx = rng.choice(Xtr.shape[0], size=bs, replace=False)
        with de.Graph() as g:
            out = _forward(p, Xtr[idx], cfg.dropout, rng)
            if task is TaskType.REGRESSION:
                L = de.mse_loss(out.reshape(bs), (ytr[idx] - y_mu) / y_sd)
            else:
                L = de.cross_entropy(out, ytr[idx])
        if not math.isfinite(float(L.data)):
            raise DivergenceError(f"MLP loss diverged at step {step} (lr={lr:g})")
        de.adam_step(p, de.backward(g, L, store=p), lr)
        if step % cfg.eval_every == 0:
            val = metric(_predict(p, Xva, task, y_mu, y_sd, n_out), yva, task)[0]
            if not math.isfinite(val):
                raise DivergenceError(f"MLP validation metric diverged at step {step} (lr={lr:g})")
            if is_better(val, best_val, task):
                best_val, best, stale = val, p.snapshot(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    p.restore(best)
    return p, best_val, (y_mu, y_sd, n_out)


def train_mlp_baseline(ds: Dataset, seed: int = 0, cfg: MLPConfig | None = None, split: str = "test"):
    """Best-of-grid MLP; returns ``(metric_primary, metric_for_improvement)`` on ``split``."""
    cfg = cfg or MLPConfig()
    best = None
    for lr in cfg.lrs:
        try:
            p, val, scale = _fit(ds, lr, seed, cfg)
        except DivergenceError:
            continue
        if best is None or is_better(val, best[1], ds.task_type):
            best = (p, val, scale)
    if best is None:
        raise BaselineError(f"MLP baseline diverged for every learning rate on {ds.name}")
    p, _, (y_mu, y_sd, n_out) = best
    X, y = ds.part(split)
    return metric(_predict(p, X, ds.task_type, y_mu, y_sd, n_out), y, ds.task_type)
