"""Experiment configuration files (TOML) and their hashes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from ..data import Dataset
from ..errors import ConfigError
from ..model.config import ModelConfig
from ..prior import PriorConfig, TaskSpec, make_context_split, sample_task
from ..rng import derive_seed
from ..task import TaskType
from ..trainer.loop import LR_GRID_HIGH, LR_GRID_LOW, LR_GRID_SIZE, TrainProtocol
from ..trainer.pretrain import PretrainSchedule
from ..trainer.strategies import FinetuneStrategy, strategy_from_dict
from .io import SchemaConfig, load_csv, preprocess

SECTIONS = {
    "experiment", "seed", "out", "model", "prior", "pretrain", "protocol", "strategy", "sweep",
    "scratch", "ensemble", "subsample", "mlp", "datasets",
}


def _take(section: str, d: dict, allowed) -> dict:
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"[{section}] has unknown keys: {sorted(extra)}")
    return dict(d)


@dataclass(frozen=True)
class PretrainSection:
    steps: int = 20000
    checkpoint: str = ""
    schedule: PretrainSchedule = PretrainSchedule()


@dataclass(frozen=True)
class SweepSection:
    low: float = LR_GRID_LOW
    high: float = LR_GRID_HIGH
    n: int = LR_GRID_SIZE


@dataclass(frozen=True)
class SubsampleSection:
    dataset: str = ""
    datasets: tuple[str, ...] = ()  # suite only: run the study on each of these
    levels: int = 4
    seeds: tuple[int, ...] = (0, 1, 2)
    methods: tuple[str, ...] = ("icl", "finetune", "scratch")


@dataclass
class RunConfig:
    experiment: str = "default"
    seed: int = 0
    out: str = "out"
    model: ModelConfig = field(default_factory=ModelConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    protocol: TrainProtocol = field(default_factory=TrainProtocol)
    strategy: FinetuneStrategy = None
    sweep: SweepSection = field(default_factory=SweepSection)
    scratch: TrainProtocol = field(default_factory=lambda: TrainProtocol(lr=1e-3))
    ensemble_members: int = 5
    subsample: SubsampleSection = field(default_factory=SubsampleSection)
    mlp_max_steps: int = 2000
    datasets: list[dict] = field(default_factory=list)
    source: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def out_dir(self) -> Path:
        root = Path(self.out)
        if not root.is_absolute():
            root = self.base_dir / root
        return root / self.experiment

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        d = json.loads(json.dumps(self.source))
        if seed is not None:
            d["seed"] = seed
        if out is not None:
            d["out"] = str(Path(out).resolve())
        return from_dict(d, self.base_dir)

    def hash(self) -> str:
        """Hash of the configuration content (output location excluded)."""
        d = {k: v for k, v in self.source.items() if k != "out"}
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def from_dict(d: dict, base_dir: Path | None = None) -> RunConfig:
    extra = set(d) - SECTIONS
    if extra:
        raise ConfigError(f"unknown top-level config keys: {sorted(extra)}")
    cfg = RunConfig(source=json.loads(json.dumps(d)), base_dir=Path(base_dir or Path.cwd()))
    cfg.experiment = str(d.get("experiment", "default"))
    cfg.seed = int(d.get("seed", 0))
    cfg.out = str(d.get("out", "out"))
    try:
        cfg.model = ModelConfig.from_dict(d.get("model", {}))
        cfg.prior = PriorConfig.from_dict({"base_seed": cfg.seed, **d.get("prior", {})})
        pre = _take("pretrain", d.get("pretrain", {}), ["steps", "checkpoint", *PretrainSchedule.__dataclass_fields__])
        sched = PretrainSchedule(**{k: pre[k] for k in PretrainSchedule.__dataclass_fields__ if k in pre})
        cfg.pretrain = PretrainSection(int(pre.get("steps", 20000)), str(pre.get("checkpoint", "")), sched)
        proto = _take("protocol", d.get("protocol", {}), TrainProtocol.__dataclass_fields__)
        cfg.protocol = TrainProtocol(**{"seed": cfg.seed, **proto})
        cfg.strategy = strategy_from_dict(d.get("strategy", {"kind": "full"}))
        cfg.sweep = SweepSection(**_take("sweep", d.get("sweep", {}), SweepSection.__dataclass_fields__))
        scr = _take("scratch", d.get("scratch", {}), TrainProtocol.__dataclass_fields__)
        cfg.scratch = TrainProtocol(**{"lr": 1e-3, "seed": cfg.seed, **scr})
        cfg.ensemble_members = int(_take("ensemble", d.get("ensemble", {}), ["members"]).get("members", 5))
        sub = _take("subsample", d.get("subsample", {}), SubsampleSection.__dataclass_fields__)
        for k in ("seeds", "methods", "datasets"):
            if k in sub:
                sub[k] = tuple(sub[k])
        cfg.subsample = SubsampleSection(**sub)
        cfg.mlp_max_steps = int(_take("mlp", d.get("mlp", {}), ["max_steps"]).get("max_steps", 2000))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    datasets = d.get("datasets", [])
    if not isinstance(datasets, list):
        raise ConfigError("[[datasets]] must be an array of tables")
    names = set()
    for ds in datasets:
        if "name" not in ds:
            raise ConfigError("every dataset needs a name")
        if ds["name"] in names:
            raise ConfigError(f"duplicate dataset name {ds['name']!r}")
        names.add(ds["name"])
    cfg.datasets = datasets
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, path.parent.resolve())


# ------------------------------------------------------------------ datasets

SYNTHETIC_KEYS = {"name", "synthetic", "n_samples", "n_features", "task", "n_classes", "depth", "noise_scale",
                  "fractions", "split_seed", "task_seed"}


def synthetic_dataset(d: dict, max_features: int = 16):
    """A held-out prior task with a train/val/test split."""
    extra = set(d) - SYNTHETIC_KEYS
    if extra:
        raise ConfigError(f"synthetic dataset {d.get('name')!r} has unknown keys: {sorted(extra)}")
    task = TaskType(d.get("task", "classification"))
    spec = TaskSpec(
        n_samples=int(d.get("n_samples", 2000)),
        n_features=int(d.get("n_features", 6)),
        task_type=task,
        n_classes=int(d.get("n_classes", 2)),
        noise_scale=float(d.get("noise_scale", 0.1)),
        depth=int(d.get("depth", 2)),
        max_features=max_features,
    )
    tseed = int(d.get("task_seed", derive_seed("suite", d["name"])))
    t = sample_task(spec, tseed)
    fr = tuple(d.get("fractions", (0.5, 0.15, 0.35)))
    split_seed = int(d.get("split_seed", 0))
    train, rest = make_context_split(t, fr[0], split_seed)
    val_share = fr[1] / (fr[1] + fr[2])
    sub_y = t.y[rest]
    vi, ti = make_context_split(sub_y, val_share, split_seed + 1, task)
    splits = {"train": train, "val": np.sort(rest[vi]), "test": np.sort(rest[ti])}
    return Dataset(d["name"], t.X, t.y, task, splits, t.n_classes, {"spec": spec.__dict__ | {"task_type": task.value}})


def build_datasets(cfg: RunConfig, names=None):
    """Materialize every configured dataset (synthetic or CSV) in config order."""
    out = []
    for d in cfg.datasets:
        if names and d["name"] not in names:
            continue
        if d.get("synthetic"):
            out.append(synthetic_dataset(d, cfg.model.max_features))
        else:
            if "path" not in d:
                raise ConfigError(f"dataset {d['name']!r} needs a path or synthetic = true")
            p = Path(d["path"])
            if not p.is_absolute():
                p = cfg.base_dir / p
            out.append(preprocess(load_csv(p, SchemaConfig.from_dict(d)), cfg.model.max_features))
    return out

