"""Report rows, relative improvement over the MLP, and cross-dataset aggregation."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from ..metrics import higher_is_better
from ..retrieval import write_csv
from ..task import TaskType

PERCENTILES = (10, 25, 50, 75, 90)
DENOM_FLOOR = 1e-8


def relative_improvement(m_model: float, m_mlp: float) -> float:
    """``(m_model - m_mlp) / max(|m_mlp|, 1e-8)`` on R² or accuracy."""
    return (m_model - m_mlp) / max(abs(m_mlp), DENOM_FLOOR)


@dataclass
class ReportRow:
    dataset: str
    task: str
    method: str
    seed: int
    metric_primary: float
    metric_for_improvement: float
    mlp_metric_for_improvement: float
    relative_improvement: float
    wall_clock_seconds: float = 0.0

    @classmethod
    def build(cls, dataset, task, method, seed, primary, for_impr, mlp_for_impr, seconds=0.0) -> "ReportRow":
        return cls(
            dataset, TaskType(task).value, method, int(seed), float(primary), float(for_impr),
            float(mlp_for_impr), relative_improvement(float(for_impr), float(mlp_for_impr)), float(seconds),
        )


ROW_COLUMNS = [
    "dataset", "task", "method", "seed", "metric_primary", "metric_for_improvement",
    "mlp_metric_for_improvement", "relative_improvement",
]


def write_rows(path, rows: list[ReportRow]) -> Path:
    """CSV of report rows; wall-clock time is kept out so reruns are byte-identical."""
    return write_csv(path, ROW_COLUMNS, ([getattr(r, c) for c in ROW_COLUMNS] for r in rows))


def read_rows(path) -> list[ReportRow]:
    out = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(ReportRow(
                r["dataset"], r["task"], r["method"], int(r["seed"]), float(r["metric_primary"]),
                float(r["metric_for_improvement"]), float(r["mlp_metric_for_improvement"]),
                float(r["relative_improvement"]),
            ))
    return out


def percentiles(values, qs=PERCENTILES) -> dict[int, float]:
    """Order-statistic percentiles (no interpolation)."""
    v = np.asarray(values, dtype=np.float64)
    return {q: float(np.percentile(v, q, method="inverted_cdf")) for q in qs}


@dataclass
class MethodSummary:
    method: str
    n_datasets: int
    mean_relative_improvement: float
    p10: float
    p25: float
    p50: float
    p75: float
    p90: float
    mean_rank: float


def aggregate(rows: list[ReportRow]) -> tuple[list[MethodSummary], list[str]]:
    """Per-method summary across datasets, plus warnings for incomplete datasets.

    Seeds are averaged per (dataset, method) first. Ranks are computed per
    dataset over the methods present there, rank 1 best, ties averaged.
    """
    cell: dict[tuple[str, str], list[ReportRow]] = {}
    for r in rows:
        cell.setdefault((r.dataset, r.method), []).append(r)
    datasets = sorted({d for d, _ in cell})
    methods = sorted({m for _, m in cell})
    seed_mean = {
        k: (float(np.mean([r.metric_primary for r in v])), float(np.mean([r.relative_improvement for r in v])), v[0].task)
        for k, v in cell.items()
    }
    warnings = []
    ranks: dict[str, list[float]] = {m: [] for m in methods}
    for d in datasets:
        present = [m for m in methods if (d, m) in seed_mean]
        missing = sorted(set(methods) - set(present))
        if missing:
            warnings.append(f"dataset {d}: no rows for {', '.join(missing)}; ranked over present methods")
        task = seed_mean[(d, present[0])][2]
        vals = np.array([seed_mean[(d, m)][0] for m in present])
        score = -vals if higher_is_better(task) else vals
        for m, rk in zip(present, rankdata(score, method="average")):
            ranks[m].append(float(rk))
    out = []
    for m in methods:
        imp = [seed_mean[(d, m)][1] for d in datasets if (d, m) in seed_mean]
        pc = percentiles(imp)
        out.append(MethodSummary(m, len(imp), float(np.mean(imp)), pc[10], pc[25], pc[50], pc[75], pc[90],
                                 float(np.mean(ranks[m]))))
    return out, warnings


SUMMARY_COLUMNS = list(MethodSummary.__dataclass_fields__)


def write_summary(path, summary: list[MethodSummary]) -> Path:
    return write_csv(path, SUMMARY_COLUMNS, ([getattr(s, c) for c in SUMMARY_COLUMNS] for s in summary))


def rows_as_dicts(rows: list[ReportRow]) -> list[dict]:
    return [asdict(r) for r in rows]
