"""One function per CLI subcommand.

Outputs live under ``{out}/{experiment}/``: ``checkpoints/*.pfnckpt``,
``history/*.jsonl`` and ``reports/*.csv``. Every CSV row and JSONL record
carries the config hash. Wall-clock times go to ``reports/timings.json`` only,
so the CSV/JSONL outputs of a rerun are byte-identical.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from ..data import Dataset
from ..errors import ConfigError
from ..metrics import metric
from ..model.checkpoint import load_checkpoint, save_checkpoint
from ..model.pfn import PFNParams
from ..retrieval import (
    CURVE_COLUMNS,
    HIST_COLUMNS,
    KNN_COLUMNS,
    curve_rows,
    entropy_error_curve,
    entropy_hist_rows,
    knn_row,
    write_csv,
)
from ..trainer.loop import evaluate, finetune, lr_grid, lr_sweep, predict_split, train_from_scratch
from ..trainer.pretrain import pretrain
from ..trainer.strategies import strategy_label
from .config import RunConfig, build_datasets
from .mlp import MLPConfig, train_mlp_baseline
from .report import ROW_COLUMNS, SUMMARY_COLUMNS, ReportRow, aggregate, read_rows
from .subsample import subsample_study, summarize


class Run:
    """Output layout and bookkeeping for one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.out_dir
        self.hash = cfg.hash()
        self.timings: dict[str, float] = {}

    def path(self, kind: str, name: str) -> Path:
        p = self.root / kind / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def ckpt(self, name: str) -> Path:
        return self.path("checkpoints", f"{name}.pfnckpt")

    def save(self, params: PFNParams, name: str) -> Path:
        params.meta["config_hash"] = self.hash
        return save_checkpoint(params, self.ckpt(name))

    def csv(self, name: str, header: list[str], rows) -> Path:
        return write_csv(self.path("reports", name), header + ["config_hash"], (list(r) + [self.hash] for r in rows))

    def jsonl(self, name: str, records) -> Path:
        p = self.path("history", f"{name}.jsonl")
        with p.open("w") as fh:
            for r in records:
                fh.write(json.dumps({**r, "config_hash": self.hash}, sort_keys=True) + "\n")
        return p

    def flush_timings(self, command: str) -> None:
        p = self.path("reports", "timings.json")
        data = json.loads(p.read_text()) if p.exists() else {}
        data[command] = self.timings
        p.write_text(json.dumps(data, indent=2, sort_keys=True))

    def base(self) -> PFNParams:
        path = Path(self.cfg.pretrain.checkpoint) if self.cfg.pretrain.checkpoint else self.ckpt("pretrained")
        if not path.is_absolute():
            path = self.cfg.base_dir / path
        return load_checkpoint(path)

    def datasets(self) -> list[Dataset]:
        ds = build_datasets(self.cfg)
        if not ds:
            raise ConfigError("the config lists no [[datasets]]")
        return ds


def _label(cfg: RunConfig) -> str:
    return strategy_label(cfg.strategy)


def cmd_pretrain(cfg: RunConfig) -> str:
    run = Run(cfg)
    t0 = time.perf_counter()
    params, losses = pretrain(cfg.model, cfg.prior, cfg.pretrain.steps, cfg.seed, cfg.pretrain.schedule)
    run.timings["pretrain"] = time.perf_counter() - t0
    run.save(params, "pretrained")
    run.jsonl("pretrain", ({"step": i + 1, "loss": v} for i, v in enumerate(losses)))
    run.flush_timings("pretrain")
    last = f"{np.mean(losses[-100:]):.4f}" if losses else "n/a"
    return f"pretrain: {cfg.pretrain.steps} steps, final loss {last} -> {run.ckpt('pretrained')}"


FT_COLUMNS = ["dataset", "strategy", "lr", "best_step", "best_val_metric", "test_metric", "n_evals"]


def cmd_finetune(cfg: RunConfig) -> str:
    run = Run(cfg)
    base = run.base()
    label = _label(cfg)
    rows = []
    for ds in run.datasets():
        t0 = time.perf_counter()
        p, h = finetune(base, ds, cfg.strategy, cfg.protocol)
        run.timings[ds.name] = time.perf_counter() - t0
        run.save(p, f"{ds.name}__{label}")
        run.jsonl(f"{ds.name}__{label}", h.records)
        rows.append((ds.name, label, cfg.protocol.lr, h.best_step, h.best_val_metric, evaluate(p, ds, "test"), len(h.records)))
    run.csv("finetune.csv", FT_COLUMNS, rows)
    run.flush_timings("finetune")
    return f"finetune: {label} on {len(rows)} dataset(s) -> {run.root / 'reports' / 'finetune.csv'}"


SWEEP_COLUMNS = ["dataset", "strategy", "lr_index", "lr", "best_step", "best_val_metric", "test_metric", "selected"]


def cmd_sweep(cfg: RunConfig) -> str:
    run = Run(cfg)
    base = run.base()
    label = _label(cfg)
    grid = lr_grid(cfg.sweep.low, cfg.sweep.high, cfg.sweep.n)
    rows = []
    for ds in run.datasets():
        t0 = time.perf_counter()
        best_lr, results = lr_sweep(base, ds, cfg.strategy, cfg.protocol, grid)
        run.timings[ds.name] = time.perf_counter() - t0
        for i, r in enumerate(results):
            if r.history is None:
                rows.append((ds.name, label, i, r.lr, "", "", "", 0))
                continue
            run.jsonl(f"{ds.name}__{label}__lr{i:02d}", r.history.records)
            test = evaluate(r.params, ds, "test")
            rows.append((ds.name, label, i, r.lr, r.history.best_step, r.history.best_val_metric, test, int(r.lr == best_lr)))
            if r.lr == best_lr:
                run.save(r.params, f"{ds.name}__{label}__sweep")
    run.csv("sweep.csv", SWEEP_COLUMNS, rows)
    run.flush_timings("sweep")
    return f"sweep: {label}, {len(grid)} learning rates x {len(rows) // max(len(grid), 1)} dataset(s)"


def cmd_scratch(cfg: RunConfig) -> str:
    run = Run(cfg)
    rows = []
    for ds in run.datasets():
        t0 = time.perf_counter()
        p, h = train_from_scratch(cfg.model, ds, cfg.scratch)
        run.timings[ds.name] = time.perf_counter() - t0
        run.save(p, f"{ds.name}__scratch")
        run.jsonl(f"{ds.name}__scratch", h.records)
        rows.append((ds.name, "scratch", cfg.scratch.lr, h.best_step, h.best_val_metric, evaluate(p, ds, "test"), len(h.records)))
    run.csv("scratch.csv", FT_COLUMNS, rows)
    run.flush_timings("scratch")
    return f"scratch: {len(rows)} dataset(s)"


def _methods_for(run: Run, ds: Dataset) -> list[tuple[str, list[Path]]]:
    """Finetuned/scratch checkpoints found for a dataset, grouped by method name."""
    found: dict[str, list[Path]] = {}
    for p in sorted((run.root / "checkpoints").glob(f"{ds.name}__*.pfnckpt")):
        found.setdefault(p.stem[len(ds.name) + 2 :], []).append(p)
    return sorted(found.items())


def cmd_eval(cfg: RunConfig) -> str:
    """Test metrics of the in-context model, every saved checkpoint, and the MLP baseline."""
    run = Run(cfg)
    base = run.base()
    rows = []
    for ds in run.datasets():
        t0 = time.perf_counter()
        mlp_primary, mlp_impr = train_mlp_baseline(ds, cfg.seed, MLPConfig(max_steps=cfg.mlp_max_steps))
        run.timings[f"{ds.name}/mlp"] = time.perf_counter() - t0
        task = ds.task_type
        _, y = ds.part("test")
        rows.append(ReportRow.build(ds.name, task, "mlp", cfg.seed, mlp_primary, mlp_impr, mlp_impr))
        prim, impr = metric(predict_split(base, ds), y, task)
        rows.append(ReportRow.build(ds.name, task, "icl", cfg.seed, prim, impr, mlp_impr))
        for method, paths in _methods_for(run, ds):
            prim, impr = metric(predict_split(load_checkpoint(paths[0]), ds), y, task)
            rows.append(ReportRow.build(ds.name, task, method, cfg.seed, prim, impr, mlp_impr))
    run.csv("report_rows.csv", ROW_COLUMNS, ([getattr(r, c) for c in ROW_COLUMNS] for r in rows))
    run.flush_timings("eval")
    return f"eval: {len(rows)} rows -> {run.root / 'reports' / 'report_rows.csv'}"


def cmd_report(cfg: RunConfig) -> str:
    run = Run(cfg)
    src = run.root / "reports" / "report_rows.csv"
    if not src.exists():
        cmd_eval(cfg)
    rows = read_rows(src)
    summary, warnings = aggregate(rows)
    run.csv("summary.csv", SUMMARY_COLUMNS, ([getattr(s, c) for c in SUMMARY_COLUMNS] for s in summary))
    run.csv("warnings.csv", ["warning"], ([w] for w in warnings))
    best = min(summary, key=lambda s: s.mean_rank)
    return f"report: {len(summary)} method(s), best mean rank {best.method} ({best.mean_rank:.3f}); relative improvement = (m - m_mlp)/max(|m_mlp|, 1e-8)"


def _ft_checkpoint(run: Run, ds: Dataset) -> PFNParams:
    label = _label(run.cfg)
    for name in (f"{ds.name}__{label}__sweep", f"{ds.name}__{label}"):
        if run.ckpt(name).exists():
            return load_checkpoint(run.ckpt(name))
    raise ConfigError(f"no finetuned checkpoint for {ds.name}; run finetune or sweep first")


def cmd_analyze(cfg: RunConfig) -> str:
    run = Run(cfg)
    base = run.base()
    knn, hist, curve = [], [], []
    for ds in run.datasets():
        ft = _ft_checkpoint(run, ds)
        row = knn_row(base, ft, ds)
        knn.append([row[c] for c in KNN_COLUMNS])
        c, pb, pf = entropy_error_curve(base, ft, ds)
        hist += entropy_hist_rows(ds.name, pb, pf)
        curve += curve_rows(ds.name, c)
    run.csv("knn_report.csv", KNN_COLUMNS, knn)
    run.csv("entropy_hist.csv", HIST_COLUMNS, hist)
    run.csv("entropy_error_curve.csv", CURVE_COLUMNS, curve)
    return f"analyze: {len(knn)} dataset(s) -> knn_report.csv, entropy_hist.csv, entropy_error_curve.csv"


SUBSAMPLE_COLUMNS = ["level", "n_train", "method", "seed", "test_metric", "steps"]
SUBSAMPLE_SUMMARY_COLUMNS = ["level", "n_train", "method", "n_seeds", "mean", "std"]


def cmd_subsample(cfg: RunConfig) -> str:
    run = Run(cfg)
    sub = cfg.subsample
    names = [sub.dataset] if sub.dataset else None
    datasets = build_datasets(cfg, names)
    if not datasets:
        raise ConfigError(f"subsample dataset {sub.dataset!r} is not configured")
    ds = datasets[0]
    base = run.base()
    t0 = time.perf_counter()
    cells = subsample_study(ds, sub.levels, sub.methods, sub.seeds, base, cfg.protocol, cfg.scratch, cfg.model)
    run.timings[ds.name] = time.perf_counter() - t0
    run.csv("subsample.csv", SUBSAMPLE_COLUMNS,
            ((c.level, c.n_train, c.method, c.seed, c.test_metric, c.steps) for c in cells))
    run.csv("subsample_summary.csv", SUBSAMPLE_SUMMARY_COLUMNS,
            ([r[c] for c in SUBSAMPLE_SUMMARY_COLUMNS] for r in summarize(cells)))
    run.flush_timings("subsample")
    return f"subsample: {ds.name}, {sub.levels} levels x {len(sub.methods)} methods x {len(sub.seeds)} seeds"


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "sweep": cmd_sweep,
    "scratch": cmd_scratch,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "subsample": cmd_subsample,
    "report": cmd_report,
}
