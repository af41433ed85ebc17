"""CSV ingestion and model-ready preprocessing."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import SPLITS, Dataset
from ..errors import CapacityError, ConfigError, LoadError
from ..rng import stream
from ..task import TaskType

KINDS = ("numeric", "binary", "categorical")
UNSEEN = "__unseen__"


@dataclass
class Column:
    name: str
    kind: str


@dataclass
class SchemaConfig:
    """How to read one CSV file.

    Every column that is not the target, the split column, categorical or
    binary is numeric. Without a split column the rows are partitioned by
    ``fractions`` under ``split_seed``.
    """

    target: str
    task: TaskType
    categorical: tuple[str, ...] = ()
    binary: tuple[str, ...] = ()
    split_column: str | None = None
    fractions: tuple[float, float, float] = (0.64, 0.16, 0.20)
    split_seed: int = 0
    name: str | None = None

    def __post_init__(self):
        self.task = TaskType(self.task)
        self.categorical = tuple(self.categorical)
        self.binary = tuple(self.binary)
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions) or abs(sum(self.fractions) - 1.0) > 1e-6:
            raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {self.fractions}")

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known - {"path"}
        if extra:
            raise ConfigError(f"unknown dataset keys: {sorted(extra)}")
        if "target" not in d or "task" not in d:
            raise ConfigError("a dataset needs 'target' and 'task'")
        kw = {k: v for k, v in d.items() if k in known}
        if "fractions" in kw:
            kw["fractions"] = tuple(kw["fractions"])
        return cls(**kw)


@dataclass
class TabularDataset:
    """Raw parsed table: per-column values, targets and row splits."""

    name: str
    columns: list[Column]
    X: dict[str, np.ndarray]
    y: np.ndarray
    task_type: TaskType
    splits: dict[str, np.ndarray]
    classes: list[str] = field(default_factory=list)
    categories: dict[str, list[str]] = field(default_factory=dict)


def fraction_split(n: int, fractions, seed: int) -> dict[str, np.ndarray]:
    """Seeded partition of ``n`` rows with sizes rounded from ``fractions``."""
    n_tr = int(round(fractions[0] * n))
    n_va = min(int(round(fractions[1] * n)), n - n_tr)
    perm = stream(seed, "csv-split").permutation(n)
    return {
        "train": np.sort(perm[:n_tr]),
        "val": np.sort(perm[n_tr : n_tr + n_va]),
        "test": np.sort(perm[n_tr + n_va :]),
    }


def _parse_float(value: str, col: str, row: int) -> float:
    try:
        v = float(value)
    except ValueError:
        raise LoadError(f"row {row}: column {col!r} holds non-numeric value {value!r}") from None
    if not np.isfinite(v):
        raise LoadError(f"row {row}: column {col!r} holds non-finite value {value!r}")
    return v


def load_csv(path, schema: SchemaConfig) -> TabularDataset:
    """Parse a UTF-8 CSV with a header row. Row numbers in errors are 1-based file lines."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path} is empty") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise LoadError(f"{path}: {exc}") from None
        header = [h.strip() for h in header]
        if schema.target not in header:
            raise LoadError(f"target column {schema.target!r} not found in {path}")
        if schema.split_column and schema.split_column not in header:
            raise LoadError(f"split column {schema.split_column!r} not found in {path}")
        for c in schema.categorical + schema.binary:
            if c not in header:
                raise LoadError(f"column {c!r} declared in the schema is not in {path}")
        rows = []
        try:
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise LoadError(f"row {lineno}: expected {len(header)} fields, found {len(row)}")
                rows.append((lineno, row))
        except (csv.Error, UnicodeDecodeError) as exc:
            raise LoadError(f"{path}: {exc}") from None
    if not rows:
        raise LoadError(f"{path} has no data rows")
    feats = [h for h in header if h not in (schema.target, schema.split_column)]
    columns = []
    for h in feats:
        kind = "categorical" if h in schema.categorical else "binary" if h in schema.binary else "numeric"
        columns.append(Column(h, kind))
    idx = {h: i for i, h in enumerate(header)}
    X: dict[str, np.ndarray] = {}
    for col in columns:
        j = idx[col.name]
        if col.kind == "numeric":
            X[col.name] = np.array([_parse_float(r[j].strip(), col.name, ln) for ln, r in rows])
        else:
            X[col.name] = np.array([r[j].strip() for _, r in rows], dtype=object)
    tj = idx[schema.target]
    classes: list[str] = []
    if schema.task is TaskType.REGRESSION:
        y = np.array([_parse_float(r[tj].strip(), schema.target, ln) for ln, r in rows])
    else:
        raw = [r[tj].strip() for _, r in rows]
        for (ln, _), v in zip(rows, raw):
            if v == "":
                raise LoadError(f"row {ln}: missing class label")
        classes = sorted(set(raw), key=_label_key)
        lookup = {c: i for i, c in enumerate(classes)}
        y = np.array([lookup[v] for v in raw], dtype=np.int64)
    if schema.split_column:
        sj = idx[schema.split_column]
        tags = []
        for ln, r in rows:
            t = r[sj].strip().lower()
            if t not in SPLITS:
                raise LoadError(f"row {ln}: unknown split token {r[sj]!r} (expected train/val/test)")
            tags.append(t)
        tags = np.array(tags)
        splits = {s: np.flatnonzero(tags == s) for s in SPLITS}
    else:
        splits = fraction_split(len(rows), schema.fractions, schema.split_seed)
    name = schema.name or path.stem
    return TabularDataset(name, columns, X, y, schema.task, splits, classes)


def _label_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


def _binary_codes(values: np.ndarray, train: np.ndarray, col: str) -> np.ndarray:
    lowered = np.array([str(v).lower() for v in values])
    if set(lowered) <= _TRUE | _FALSE:
        return np.isin(lowered, list(_TRUE)).astype(np.float32)
    levels = sorted(set(lowered[train]))
    if len(levels) > 2:
        raise LoadError(f"binary column {col!r} has {len(levels)} distinct train values")
    bad = set(lowered) - set(levels)
    if bad:
        raise LoadError(f"binary column {col!r} has values unseen in train: {sorted(bad)[:3]}")
    return (lowered == levels[-1]).astype(np.float32) if len(levels) == 2 else np.zeros(len(values), np.float32)


def encoded_width(ds: TabularDataset) -> dict[str, int]:
    """Post-encoding width of every column (categoricals: train categories + unseen)."""
    train = ds.splits["train"]
    out = {}
    for c in ds.columns:
        if c.kind == "categorical":
            out[c.name] = len(set(ds.X[c.name][train])) + 1
        else:
            out[c.name] = 1
    return out


def preprocess(ds: TabularDataset, max_features: int = 16) -> Dataset:
    """Encode to a float matrix using train-split statistics only.

    Numeric columns are z-scored (zero variance gives zeros), binary columns
    become 0/1, categoricals are one-hot over the train categories plus an
    unseen bucket.
    """
    widths = encoded_width(ds)
    total = sum(widths.values())
    if total > max_features:
        widest = max(widths, key=lambda k: (widths[k], k))
        raise CapacityError(
            f"{ds.name}: {total} encoded features exceed max_features={max_features} "
            f"(widest column {widest!r} has {widths[widest]})"
        )
    train = ds.splits["train"]
    blocks, names = [], []
    stats: dict[str, dict] = {}
    for c in ds.columns:
        v = ds.X[c.name]
        if c.kind == "numeric":
            mu = float(v[train].mean()) if train.size else 0.0
            sd = float(v[train].std()) if train.size else 0.0
            z = (v - mu) / sd if sd > 1e-12 else np.zeros_like(v)
            blocks.append(z[:, None].astype(np.float32))
            names.append(c.name)
            stats[c.name] = {"mean": mu, "std": sd}
        elif c.kind == "binary":
            blocks.append(_binary_codes(v, train, c.name)[:, None])
            names.append(c.name)
        else:
            cats = sorted(set(v[train]))
            ds.categories[c.name] = cats
            lookup = {k: i for i, k in enumerate(cats)}
            codes = np.array([lookup.get(x, len(cats)) for x in v])
            onehot = np.zeros((v.shape[0], len(cats) + 1), np.float32)
            onehot[np.arange(v.shape[0]), codes] = 1.0
            blocks.append(onehot)
            names += [f"{c.name}={k}" for k in cats] + [f"{c.name}={UNSEEN}"]
    n = ds.y.shape[0]
    X = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0), np.float32)
    meta = {"feature_names": names, "numeric_stats": stats, "classes": list(ds.classes)}
    n_classes = len(ds.classes) if ds.task_type is TaskType.CLASSIFICATION else 0
    return Dataset(ds.name, X, ds.y, ds.task_type, dict(ds.splits), n_classes, meta)
