"""Train-size study: in-context, finetuned and from-scratch models on nested subsets."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..data import Dataset
from ..errors import ContractError
from ..model.config import ModelConfig
from ..model.pfn import PFNParams
from ..rng import stream
from ..trainer.loop import TrainProtocol, evaluate, finetune, train_from_scratch
from ..trainer.strategies import Full

MIN_LEVEL_ROWS = 64
METHODS = ("icl", "finetune", "scratch")


def level_sizes(n_train: int, n_levels: int) -> list[int]:
    return [n_train // (2**k) for k in range(n_levels)]


def nested_levels(train_idx: np.ndarray, n_levels: int, seed: int) -> list[np.ndarray]:
    """Level 0 is the full train split; each next level is a seeded half of the previous."""
    if n_levels < 1:
        raise ContractError("need at least one level")
    sizes = level_sizes(train_idx.size, n_levels)
    if sizes[-1] < MIN_LEVEL_ROWS:
        raise ContractError(
            f"{n_levels} levels from {train_idx.size} train rows leave {sizes[-1]} rows at the smallest level "
            f"(need >= {MIN_LEVEL_ROWS})"
        )
    levels = [np.sort(train_idx)]
    for k in range(1, n_levels):
        prev = levels[-1]
        pick = stream(seed, "subsample", k).permutation(prev.size)[: sizes[k]]
        levels.append(np.sort(prev[pick]))
    return levels


@dataclass
class SubsampleCell:
    level: int
    n_train: int
    method: str
    seed: int
    test_metric: float
    steps: int


def subsample_study(
    dataset: Dataset,
    n_levels: int,
    methods,
    seeds,
    pretrained: PFNParams,
    ft_protocol: TrainProtocol,
    scratch_protocol: TrainProtocol,
    scratch_config: ModelConfig | None = None,
) -> list[SubsampleCell]:
    """Run every (level, method, seed) cell; validation and test rows stay fixed."""
    methods = list(methods)
    bad = set(methods) - set(METHODS)
    if bad:
        raise ContractError(f"unknown subsample methods: {sorted(bad)}")
    cells = []
    scratch_config = scratch_config or pretrained.config
    for seed in seeds:
        levels = nested_levels(dataset.splits["train"], n_levels, seed)
        for k, idx in enumerate(levels):
            ds = dataset.with_train(idx, f"{dataset.name}@L{k}")
            for m in methods:
                if m == "icl":
                    cells.append(SubsampleCell(k, idx.size, m, seed, evaluate(pretrained, ds, "test"), 0))
                    continue
                if m == "finetune":
                    p, h = finetune(pretrained, ds, Full(), replace(ft_protocol, seed=seed))
                else:
                    p, h = train_from_scratch(scratch_config, ds, replace(scratch_protocol, seed=seed))
                steps = h.records[-1]["step"] if h.records else 0
                cells.append(SubsampleCell(k, idx.size, m, seed, evaluate(p, ds, "test"), steps))
    return cells


def summarize(cells: list[SubsampleCell]) -> list[dict]:
    """Seed mean and standard deviation per (level, method)."""
    keys = sorted({(c.level, c.method) for c in cells})
    out = []
    for level, method in keys:
        vals = np.array([c.test_metric for c in cells if c.level == level and c.method == method])
        n = next(c.n_train for c in cells if c.level == level)
        out.append({"level": level, "n_train": n, "method": method, "n_seeds": vals.size,
                    "mean": float(vals.mean()), "std": float(vals.std())})
    return out
