"""Model-ready datasets with named row splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model.pfn import ContextBatch
from .task import TaskType

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    """Numeric feature matrix, targets and disjoint train/val/test indices."""

    name: str
    X: np.ndarray
    y: np.ndarray
    task_type: TaskType
    splits: dict[str, np.ndarray]
    n_classes: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task_type = TaskType(self.task_type)
        self.X = np.asarray(self.X, dtype=np.float32)
        if self.task_type is TaskType.CLASSIFICATION:
            self.y = np.asarray(self.y, dtype=np.int64)
            if not self.n_classes:
                self.n_classes = int(self.y.max()) + 1 if self.y.size else 0
        else:
            self.y = np.asarray(self.y, dtype=np.float64)
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}
        n = self.X.shape[0]
        seen = np.zeros(n, dtype=bool)
        for k, idx in self.splits.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ContractError(f"split {k!r} indexes outside [0, {n})")
            if seen[idx].any() or np.unique(idx).size != idx.size:
                raise ContractError(f"split {k!r} overlaps another split")
            seen[idx] = True

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def part(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[split]
        return self.X[idx], self.y[idx]

    def context(self, query: str = "val", prompt: str = "train") -> ContextBatch:
        Xp, yp = self.part(prompt)
        Xq, _ = self.part(query)
        return ContextBatch(Xp, yp, Xq, self.task_type, self.n_classes)

    def with_train(self, train_idx: np.ndarray, name: str | None = None) -> "Dataset":
        """Copy of this dataset whose train split is replaced by ``train_idx``."""
        splits = dict(self.splits)
        splits["train"] = np.asarray(train_idx)
        return Dataset(name or self.name, self.X, self.y, self.task_type, splits, self.n_classes, dict(self.meta))
