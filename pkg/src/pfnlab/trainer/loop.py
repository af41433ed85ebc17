"""Finetuning, learning-rate sweeps, from-scratch training and ensembles."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import diffengine as de
from ..data import Dataset
from ..errors import ContractError, DivergenceError, ProtocolError, SweepError
from ..metrics import is_better, metric
from ..model.config import ModelConfig
from ..model.pfn import ContextBatch, PFNParams, init_params, pack, predict, run_packed
from ..rng import stream
from ..task import TaskType
from .strategies import FinetuneStrategy, prepare

LR_GRID_LOW = 5e-6
LR_GRID_HIGH = 5e-4
LR_GRID_SIZE = 10
EVAL_CHUNK = 512


def lr_grid(low: float = LR_GRID_LOW, high: float = LR_GRID_HIGH, n: int = LR_GRID_SIZE) -> np.ndarray:
    """Log-uniform grid with both endpoints included."""
    return np.geomspace(low, high, n)


@dataclass(frozen=True)
class TrainProtocol:
    lr: float = 1e-4
    pred_len: int = 1024
    eval_every: int = 10
    patience: int = 16
    max_steps: int = 2000
    seed: int = 0
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if self.pred_len < 1:
            raise ProtocolError("pred_len must be >= 1")
        if self.eval_every < 1:
            raise ProtocolError("eval_every must be >= 1")
        if self.patience < 1:
            raise ProtocolError("patience must be >= 1")
        if self.max_steps < 0:
            raise ProtocolError("max_steps must be >= 0")
        if self.lr < 0:
            raise ProtocolError("lr must be non-negative")

    def effective_pred_len(self, n_train: int) -> int:
        """Loss objects per step: the requested count, capped at half the train rows.

        Raises :class:`ProtocolError` when the capped count still leaves no
        valid split into loss objects and a non-empty prompt.
        """
        pl = min(self.pred_len, n_train // 2)
        if pl < 1 or pl >= n_train:
            raise ProtocolError(f"pred_len={self.pred_len} leaves no prompt/loss split of {n_train} train rows")
        return pl

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunHistory:
    """Per-evaluation telemetry of one training run."""

    task_type: TaskType
    records: list[dict] = field(default_factory=list)
    best_step: int | None = None
    best_val_metric: float | None = None
    stopped_early: bool = False
    wall_clock_seconds: float = 0.0

    def add(self, step: int, val_metric: float, train_loss: float | None) -> bool:
        """Append an evaluation; return True if it is a new best."""
        self.records.append({"step": int(step), "val_metric": float(val_metric), "train_loss": train_loss})
        if self.best_val_metric is None or is_better(val_metric, self.best_val_metric, self.task_type):
            self.best_step, self.best_val_metric = int(step), float(val_metric)
            return True
        return False

    def evals_after_best(self) -> int:
        if self.best_step is None:
            return 0
        return sum(1 for r in self.records if r["step"] > self.best_step)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl())
        return path

    @classmethod
    def read(cls, path, task_type) -> "RunHistory":
        h = cls(TaskType(task_type))
        for line in Path(path).read_text().splitlines():
            if line.strip():
                r = json.loads(line)
                h.add(r["step"], r["val_metric"], r["train_loss"])
        return h


# ------------------------------------------------------------------ losses


def context_loss(params: PFNParams, batches: list[ContextBatch], targets: list[np.ndarray], rng=None) -> de.Tensor:
    """Task loss of the query rows of several same-task contexts.

    Every context contributes equally regardless of its query count.
    Regression targets are compared in each context's z-scored space.
    """
    cfg = params.config
    packed = pack(batches, cfg)
    out, stats, _ = run_packed(params, packed, rng=rng)
    B, n_te = len(batches), packed.n_te
    weight = np.zeros((B, n_te))
    tgt = np.zeros((B, n_te))
    for i, (b, t) in enumerate(zip(batches, targets)):
        weight[i, : b.n_test] = 1.0 / max(b.n_test, 1)
        tgt[i, : b.n_test] = t
    if packed.task is TaskType.REGRESSION:
        mu, sd, _ = stats
        z = (tgt - mu[:, None]) / sd[:, None] * (weight > 0)
        return de.mse_loss(out, z, weight=weight)
    n_act = np.broadcast_to(packed.n_classes[:, None], (B, n_te))
    return de.cross_entropy(out, tgt.astype(np.intp), n_active=n_act, weight=weight)


def evaluate(params: PFNParams, dataset: Dataset, split: str = "val", prompt: str = "train") -> float:
    """Primary metric (accuracy or RMSE) with ``prompt`` rows as the context."""
    preds = predict(params, dataset.context(split, prompt), chunk=EVAL_CHUNK)
    return metric(preds, dataset.part(split)[1], dataset.task_type)[0]


def predict_split(params: PFNParams, dataset: Dataset, split: str = "test") -> np.ndarray:
    return predict(params, dataset.context(split), chunk=EVAL_CHUNK)


# ------------------------------------------------------------------ loops


def _train(work: PFNParams, dataset: Dataset, protocol: TrainProtocol, stream_id: str) -> tuple[PFNParams, RunHistory]:
    X, y = dataset.part("train")
    n_train = X.shape[0]
    pl = protocol.effective_pred_len(n_train)
    hist = RunHistory(dataset.task_type)
    if protocol.max_steps == 0:
        return work, hist
    start = time.perf_counter()
    work.reset_optimizer()
    hist.add(0, evaluate(work, dataset), None)
    best = work.snapshot()
    stale = 0
    losses: list[float] = []
    for step in range(1, protocol.max_steps + 1):
        perm = stream(protocol.seed, stream_id, step).permutation(n_train)
        loss_idx, prompt_idx = perm[:pl], perm[pl:]
        batch = ContextBatch(X[prompt_idx], y[prompt_idx], X[loss_idx], dataset.task_type, dataset.n_classes)
        with de.Graph() as g:
            L = context_loss(work, [batch], [y[loss_idx]])
        value = float(L.data)
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at step {step} (lr={protocol.lr:g})")
        losses.append(value)
        grads = de.backward(g, L, store=work)
        if protocol.grad_clip:
            de.clip_grad_norm(grads, protocol.grad_clip)
        de.adam_step(work, grads, protocol.lr)
        if step % protocol.eval_every == 0:
            val = evaluate(work, dataset)
            if not math.isfinite(val):
                raise DivergenceError(f"non-finite validation metric at step {step} (lr={protocol.lr:g})")
            if hist.add(step, val, float(np.mean(losses))):
                best = work.snapshot()
                stale = 0
            else:
                stale += 1
            losses = []
            if stale >= protocol.patience:
                hist.stopped_early = True
                break
    work.restore(best)
    hist.wall_clock_seconds = time.perf_counter() - start
    return work, hist


def finetune(
    params: PFNParams, dataset: Dataset, strategy: FinetuneStrategy, protocol: TrainProtocol
) -> tuple[PFNParams, RunHistory]:
    """Finetune a copy of ``params`` on ``dataset`` and return the best-validation parameters.

    Each step draws a fresh split of the train rows into ``pred_len`` loss
    objects and a prompt made of the rest. Validation uses the whole train
    split as the prompt. Training stops after ``patience`` evaluations
    without strict improvement.
    """
    protocol.effective_pred_len(dataset.splits["train"].size)
    work = prepare(params, strategy, dataset.part("train")[0], seed=protocol.seed)
    work.meta["finetune"] = {"dataset": dataset.name, "lr": protocol.lr, "seed": protocol.seed}
    return _train(work, dataset, protocol, "finetune")


def train_from_scratch(config: ModelConfig, dataset: Dataset, protocol: TrainProtocol) -> tuple[PFNParams, RunHistory]:
    """The finetuning loop started from ``init_params(config, protocol.seed)``."""
    protocol.effective_pred_len(dataset.splits["train"].size)
    work = init_params(config, protocol.seed)
    work.meta["scratch"] = {"dataset": dataset.name, "lr": protocol.lr, "seed": protocol.seed}
    return _train(work, dataset, protocol, "scratch")


@dataclass
class SweepResult:
    lr: float
    params: PFNParams | None
    history: RunHistory | None
    error: str | None = None

    @property
    def val_metric(self) -> float | None:
        return None if self.history is None else self.history.best_val_metric


def lr_sweep(
    params: PFNParams,
    dataset: Dataset,
    strategy: FinetuneStrategy,
    base_protocol: TrainProtocol,
    grid=None,
) -> tuple[float, list[SweepResult]]:
    """Finetune at every grid learning rate; pick the best validation metric.

    Runs that diverge are skipped; ties go to the smaller learning rate.
    """
    grid = lr_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    results = []
    for lr in sorted(float(v) for v in grid):
        try:
            p, h = finetune(params, dataset, strategy, replace(base_protocol, lr=lr))
            results.append(SweepResult(lr, p, h))
        except DivergenceError as exc:
            results.append(SweepResult(lr, None, None, str(exc)))
    best = None
    for r in results:
        if r.history is None or r.val_metric is None:
            continue
        if best is None or is_better(r.val_metric, best.val_metric, dataset.task_type):
            best = r
    if best is None:
        raise SweepError(f"every learning rate diverged on {dataset.name}")
    return best.lr, results


def ensemble_predict(checkpoints: list[PFNParams], dataset: Dataset, split: str = "test") -> np.ndarray:
    """Mean regression prediction, or mean class probabilities, over members."""
    if not checkpoints:
        raise ContractError("an ensemble needs at least one member")
    ref = checkpoints[0].meta["config"]
    for c in checkpoints[1:]:
        if c.meta["config"] != ref:
            raise ContractError("ensemble members have different model configs")
    preds = [np.asarray(predict_split(c, dataset, split), dtype=np.float64) for c in checkpoints]
    return np.mean(preds, axis=0)


def majority_metric(dataset: Dataset, split: str = "test") -> float:
    """Accuracy of always predicting the most frequent train class."""
    _, ytr = dataset.part("train")
    _, yte = dataset.part(split)
    top = np.bincount(ytr, minlength=dataset.n_classes).argmax()
    return float(np.mean(yte == top))

