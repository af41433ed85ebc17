"""Surrogate synthetic prior for meta-pretraining.

Tasks come from a random-MLP structural causal model: inputs are drawn from
a per-task Gaussian mixture and the latent target is a random MLP of those
inputs with a randomly chosen nonlinearity per layer. Regression targets are
the standardized latent plus Gaussian noise; classification labels are
near-balanced quantile bins of the latent.

This stands in for an unpublished prior. It is only meant to be a nontrivial
distribution over tabular tasks on which in-context learning can emerge.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, SplitError, TaskDegenerateError
from .rng import derive_seed, stream
from .task import TaskType

_NONLINEARITIES = {
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
    "sin": np.sin,
    "abs": np.abs,
    "identity": lambda x: x,
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "square": lambda x: np.clip(x, -3, 3) ** 2,
}
_NL_NAMES = tuple(_NONLINEARITIES)
MAX_RESAMPLES = 8


@dataclass(frozen=True)
class TaskSpec:
    n_samples: int
    n_features: int
    task_type: TaskType
    n_classes: int = 2
    noise_scale: float = 0.1
    depth: int = 2
    max_features: int = 16
    max_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "task_type", TaskType(self.task_type))
        if self.n_samples < 8:
            raise ConfigError(f"n_samples must be >= 8, got {self.n_samples}")
        if not 1 <= self.n_features <= self.max_features:
            raise ConfigError(f"n_features must lie in [1, {self.max_features}], got {self.n_features}")
        if self.task_type is TaskType.CLASSIFICATION and not 2 <= self.n_classes <= self.max_classes:
            raise ConfigError(f"n_classes must lie in [2, {self.max_classes}], got {self.n_classes}")
        if not 1 <= self.depth <= 3:
            raise ConfigError(f"depth must lie in [1, 3], got {self.depth}")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")


@dataclass
class SyntheticTask:
    X: np.ndarray
    y: np.ndarray
    spec: TaskSpec
    seed: int

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes if self.spec.task_type is TaskType.CLASSIFICATION else 0


def _sample_inputs(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    k = int(rng.integers(1, 4))
    means = rng.normal(0.0, 1.5, size=(k, m))
    scales = np.exp(rng.normal(0.0, 0.4, size=(k, m)))
    weights = rng.dirichlet(np.ones(k))
    comp = rng.choice(k, size=n, p=weights)
    X = means[comp] + scales[comp] * rng.standard_normal((n, m))
    # a random subset of features gets a skewed marginal
    skew = rng.random(m) < 0.2
    X[:, skew] = np.sinh(X[:, skew])
    return X


def _random_mlp(rng: np.random.Generator, X: np.ndarray, depth: int) -> np.ndarray:
    h = (X - X.mean(axis=0)) / (X.std(axis=0) + 1e-6)
    # sparse feature relevance
    keep = rng.random(h.shape[1]) < 0.7
    if not keep.any():
        keep[int(rng.integers(h.shape[1]))] = True
    h = h * keep
    for _ in range(depth):
        width = int(rng.integers(8, 33))
        W = rng.standard_normal((h.shape[1], width)) / np.sqrt(h.shape[1])
        b = rng.normal(0.0, 0.5, size=width)
        h = _NONLINEARITIES[_NL_NAMES[int(rng.integers(len(_NL_NAMES)))]](h @ W + b)
    w_out = rng.standard_normal(h.shape[1]) / np.sqrt(h.shape[1])
    return h @ w_out


def quantile_bins(latent: np.ndarray, n_classes: int) -> np.ndarray:
    """Rank-based binning into ``n_classes`` near-equal classes (ties by index)."""
    order = np.argsort(latent, kind="stable")
    ranks = np.empty(latent.size, dtype=np.int64)
    ranks[order] = np.arange(latent.size)
    return (ranks * n_classes) // latent.size


def sample_task(spec: TaskSpec, seed: int) -> SyntheticTask:
    """Draw one task; identical ``(spec, seed)`` give bit-identical tasks."""
    rng = stream(seed, "task")
    n, m = spec.n_samples, spec.n_features
    X = _sample_inputs(rng, n, m)
    for _ in range(MAX_RESAMPLES):
        latent = _random_mlp(rng, X, spec.depth)
        if np.all(np.isfinite(latent)) and np.unique(latent).size >= min(max(spec.n_classes, 2), n) and latent.std() > 1e-8:
            break
    else:
        raise TaskDegenerateError(f"latent stayed degenerate after {MAX_RESAMPLES} resamples (seed={seed})")
    z = (latent - latent.mean()) / latent.std()
    if spec.task_type is TaskType.REGRESSION:
        y = (z + spec.noise_scale * rng.standard_normal(n)).astype(np.float32)
    else:
        y = quantile_bins(z, spec.n_classes)
    return SyntheticTask(X.astype(np.float32), y, spec, int(seed))


def make_context_split(task_or_y, train_frac: float, seed: int, task_type=None) -> tuple[np.ndarray, np.ndarray]:
    """Partition rows into (train, test) index arrays.

    Classification splits are stratified when every class has at least two
    members. Accepts a :class:`SyntheticTask` or a bare target vector plus
    ``task_type``.
    """
    if isinstance(task_or_y, SyntheticTask):
        y, task_type = task_or_y.y, task_or_y.spec.task_type
    else:
        y, task_type = np.asarray(task_or_y), TaskType(task_type)
    if not 0.0 < train_frac < 1.0:
        raise SplitError(f"train_frac must lie in (0, 1), got {train_frac}")
    n = y.shape[0]
    n_train = int(round(train_frac * n))
    if n_train < 4 or n_train >= n:
        raise SplitError(f"split of {n} rows at {train_frac} leaves {n_train} train / {n - n_train} test rows")
    rng = stream(seed, "split")
    classes, counts = (np.unique(y, return_counts=True) if task_type is TaskType.CLASSIFICATION else (None, None))
    if classes is None or counts.min() < 2:
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
    else:
        # largest-remainder allocation of the train budget across classes
        quota = counts * (n_train / n)
        take = np.floor(quota).astype(int)
        rest = n_train - take.sum()
        if rest > 0:
            frac_order = np.argsort(-(quota - take), kind="stable")
            take[frac_order[:rest]] += 1
        take = np.clip(take, 1, counts - 1)
        chosen = []
        for c, k in zip(classes, take):
            members = np.flatnonzero(y == c)
            chosen.append(members[rng.permutation(members.size)[:k]])
        train = np.sort(np.concatenate(chosen))
    mask = np.zeros(n, dtype=bool)
    mask[train] = True
    test = np.flatnonzero(~mask)
    if train.size < 4 or test.size < 1:
        raise SplitError("split leaves too few rows")
    return train, test


@dataclass(frozen=True)
class PriorConfig:
    """Ranges that synthetic task specs are drawn from (inclusive)."""

    n_samples: tuple[int, int] = (32, 192)
    n_features: tuple[int, int] = (1, 12)
    n_classes: tuple[int, int] = (2, 10)
    noise_scale: tuple[float, float] = (0.0, 0.3)
    depth: tuple[int, int] = (1, 3)
    train_frac: tuple[float, float] = (0.4, 0.8)
    classification_ratio: float = 0.7
    batch_size: int = 8
    max_features: int = 16
    max_classes: int = 10
    base_seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "n_features", "n_classes", "noise_scale", "depth", "train_frac"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"prior range {name} is empty: {lo} > {hi}")
            object.__setattr__(self, name, (lo, hi))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.classification_ratio <= 1.0:
            raise ConfigError("classification_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown prior config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetaItem:
    task: SyntheticTask
    train_idx: np.ndarray
    test_idx: np.ndarray = field(repr=False)


def draw_spec(cfg: PriorConfig, rng: np.random.Generator) -> TaskSpec:
    is_cls = rng.random() < cfg.classification_ratio
    return TaskSpec(
        n_samples=int(rng.integers(cfg.n_samples[0], cfg.n_samples[1] + 1)),
        n_features=int(rng.integers(cfg.n_features[0], cfg.n_features[1] + 1)),
        task_type=TaskType.CLASSIFICATION if is_cls else TaskType.REGRESSION,
        n_classes=int(rng.integers(cfg.n_classes[0], cfg.n_classes[1] + 1)) if is_cls else 2,
        noise_scale=float(rng.uniform(*cfg.noise_scale)),
        depth=int(rng.integers(cfg.depth[0], cfg.depth[1] + 1)),
        max_features=cfg.max_features,
        max_classes=cfg.max_classes,
    )


def sample_meta_batch(cfg: PriorConfig, step: int, stream_id: str = "pretrain") -> list[MetaItem]:
    """Tasks and context splits for one meta-training step.

    Every slot is keyed by ``(base_seed, stream_id, step, slot)``, so any step
    can be regenerated on its own.
    """
    items = []
    for slot in range(cfg.batch_size):
        rng = stream(cfg.base_seed, stream_id, step, slot)
        spec = draw_spec(cfg, rng)
        seed = derive_seed(cfg.base_seed, stream_id, step, slot)
        task = sample_task(spec, seed)
        frac = float(rng.uniform(*cfg.train_frac))
        train, test = make_context_split(task, frac, seed)
        items.append(MetaItem(task, train, test))
    return items
