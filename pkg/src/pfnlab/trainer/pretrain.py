"""Meta-training on the synthetic prior."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .. import diffengine as de
from ..errors import ContractError, DivergenceError
from ..model.config import ModelConfig
from ..model.pfn import ContextBatch, PFNParams, init_params, predict
from ..prior import PriorConfig, draw_spec, make_context_split, sample_meta_batch, sample_task
from ..rng import derive_seed, stream
from ..task import TaskType
from .loop import context_loss


@dataclass(frozen=True)
class PretrainSchedule:
    """Linear warmup to ``lr`` followed by cosine decay to ``lr * final_frac``."""

    lr: float = 5e-4
    warmup: int = 500
    final_frac: float = 0.1
    grad_clip: float = 1.0

    def lr_at(self, step: int, total: int) -> float:
        if step <= self.warmup:
            return self.lr * step / max(self.warmup, 1)
        frac = (step - self.warmup) / max(total - self.warmup, 1)
        cos = 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))
        return self.lr * (self.final_frac + (1.0 - self.final_frac) * cos)

    def to_dict(self) -> dict:
        return asdict(self)


def meta_batches(prior_cfg: PriorConfig, step: int) -> list[tuple[list[ContextBatch], list[np.ndarray]]]:
    """Context batches of one meta-step, grouped by task type.

    Class identities are shuffled per task so no label order is baked in.
    """
    groups: dict[TaskType, tuple[list, list]] = {}
    for slot, item in enumerate(sample_meta_batch(prior_cfg, step)):
        t = item.task
        y = t.y
        if t.spec.task_type is TaskType.CLASSIFICATION:
            perm = stream(prior_cfg.base_seed, "labels", step, slot).permutation(t.spec.n_classes)
            y = perm[y]
        b = ContextBatch(t.X[item.train_idx], y[item.train_idx], t.X[item.test_idx], t.spec.task_type, t.n_classes)
        bs, ts = groups.setdefault(t.spec.task_type, ([], []))
        bs.append(b)
        ts.append(y[item.test_idx])
    return [groups[k] for k in sorted(groups, key=lambda k: k.value)]


def pretrain(
    config: ModelConfig,
    prior_cfg: PriorConfig,
    steps: int,
    seed: int,
    schedule: PretrainSchedule | None = None,
    init: PFNParams | None = None,
    start_step: int = 0,
    callback: Callable[[int, float, PFNParams], None] | None = None,
) -> tuple[PFNParams, list[float]]:
    """Meta-train a freshly initialized model for ``steps`` prior batches.

    Returns the parameters and the per-step loss curve. ``init`` and
    ``start_step`` resume an interrupted run (the batches of each step depend
    only on the step index). ``callback(step, loss, params)`` runs after
    every update.
    """
    if steps < 0:
        raise ContractError("steps must be >= 0")
    schedule = schedule or PretrainSchedule()
    params = init_params(config, seed) if init is None else init
    params.meta.update({"pretrain_seed": int(seed), "prior_hash": prior_cfg.hash(), "schedule": schedule.to_dict()})
    params.meta.setdefault("pretrain_step", 0)
    losses: list[float] = []
    for step in range(start_step + 1, steps + 1):
        groups = meta_batches(prior_cfg, step)
        drop_rng = stream(seed, "dropout", step) if config.dropout > 0 else None
        n_total = sum(len(b) for b, _ in groups)
        with de.Graph() as g:
            total = None
            for batches, targets in groups:
                part = context_loss(params, batches, targets, rng=drop_rng) * (len(batches) / n_total)
                total = part if total is None else total + part
        value = float(total.data)
        if not math.isfinite(value):
            raise DivergenceError(
                f"pretraining loss became {value} at step {step} (lr={schedule.lr_at(step, steps):.3g}); "
                "lower the learning rate or enable gradient clipping"
            )
        grads = de.backward(g, total, store=params)
        de.clip_grad_norm(grads, schedule.grad_clip)
        de.adam_step(params, grads, schedule.lr_at(step, steps))
        params.meta["pretrain_step"] = step
        losses.append(value)
        if callback is not None:
            callback(step, value, params)
    return params, losses


def heldout_tasks(prior_cfg: PriorConfig, n_tasks: int, task_type: TaskType = TaskType.CLASSIFICATION, seed: int = 1):
    """Fresh prior tasks from a stream disjoint from pretraining, with splits."""
    out = []
    i = 0
    while len(out) < n_tasks:
        rng = stream(prior_cfg.base_seed, "heldout", seed, i)
        spec = draw_spec(prior_cfg, rng)
        i += 1
        if spec.task_type is not task_type:
            continue
        tseed = derive_seed(prior_cfg.base_seed, "heldout", seed, i)
        task = sample_task(spec, tseed)
        train, test = make_context_split(task, float(rng.uniform(*prior_cfg.train_frac)), tseed)
        out.append((task, train, test))
    return out


def heldout_accuracy(params: PFNParams, tasks) -> dict[str, float]:
    """Mean in-context accuracy and majority-class accuracy over classification tasks."""
    acc, maj = [], []
    for task, train, test in tasks:
        b = ContextBatch(task.X[train], task.y[train], task.X[test], TaskType.CLASSIFICATION, task.n_classes)
        pred = predict(params, b).argmax(axis=1)
        acc.append(float(np.mean(pred == task.y[test])))
        top = np.bincount(task.y[train], minlength=task.n_classes).argmax()
        maj.append(float(np.mean(task.y[test] == top)))
    return {"model": float(np.mean(acc)), "majority": float(np.mean(maj))}


def pretrain_key(config: ModelConfig, prior_cfg: PriorConfig, steps: int, seed: int, schedule: PretrainSchedule | None = None) -> str:
    """Stable hash of everything that determines a pretraining result."""
    blob = {
        "model": config.to_dict(),
        "prior": prior_cfg.to_dict(),
        "steps": int(steps),
        "seed": int(seed),
        "schedule": (schedule or PretrainSchedule()).to_dict(),
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]
