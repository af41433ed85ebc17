"""The benchmark suite behind the trend checks.

Every stage writes its result to a JSON file under the cache directory and
is skipped when that file already exists, so an interrupted run resumes
where it stopped. Stage results are plain numbers; the finetuned Full
checkpoint of each dataset is kept for the attention analyses.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable

from ..data import Dataset
from ..errors import ConfigError
from ..metrics import is_better, mean_loss, metric
from ..model.checkpoint import load_checkpoint, save_checkpoint
from ..model.pfn import PFNParams, init_params
from ..retrieval import entropy_error_curve, knn_row, quartile_delta_error
from ..trainer.loop import ensemble_predict, evaluate, finetune, lr_grid, lr_sweep, predict_split
from ..trainer.pretrain import heldout_accuracy, heldout_tasks, pretrain
from ..trainer.strategies import EmbLnHead, Full, LastLayers, LoRA, strategy_label
from .config import RunConfig, build_datasets, load_config
from .mlp import MLPConfig, train_mlp_baseline
from .report import ReportRow, aggregate
from .subsample import subsample_study, summarize

PEFT_STRATEGIES = (LoRA(rank=8), LastLayers(k=1), EmbLnHead())
PEFT_GRID_TOP = 4
PRED_LENS = (2, 32, 256)
N_HELDOUT = 200


class Cache:
    def __init__(self, root: Path, log: Callable[[str], None] = print):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.log = log

    def stage(self, name: str, fn: Callable[[], dict]) -> dict:
        path = self.root / f"{name}.json"
        if path.exists():
            return json.loads(path.read_text())
        t0 = time.perf_counter()
        out = fn()
        out["_seconds"] = time.perf_counter() - t0
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(out, indent=1, sort_keys=True))
        tmp.replace(path)
        self.log(f"[suite] {name}: {out['_seconds']:.0f}s")
        return out


def _test(params: PFNParams, ds: Dataset) -> float:
    return evaluate(params, ds, "test")


def _sweep_stage(base, ds, strategy, protocol, grid, keep: Path | None = None) -> dict:
    best_lr, results = lr_sweep(base, ds, strategy, protocol, grid)
    runs = []
    best_params = None
    for r in results:
        entry = {"lr": r.lr, "diverged": r.history is None}
        if r.history is not None:
            entry.update(best_step=r.history.best_step, best_val=r.history.best_val_metric,
                         n_evals=len(r.history.records), test=_test(r.params, ds))
        runs.append(entry)
        if r.lr == best_lr:
            best_params = r.params
    if keep is not None:
        save_checkpoint(best_params, keep)
    best = next(e for e in runs if e["lr"] == best_lr)
    return {"strategy": strategy_label(strategy), "best_lr": best_lr, "test": best["test"],
            "best_val": best["best_val"], "runs": runs}


def run_dataset(cache: Cache, base: PFNParams, ds: Dataset, cfg: RunConfig) -> dict:
    name = ds.name
    proto = cfg.protocol
    grid = lr_grid(cfg.sweep.low, cfg.sweep.high, cfg.sweep.n)
    res: dict = {"task": ds.task_type.value}
    res["icl"] = cache.stage(f"{name}/icl", lambda: {
        "test": _test(base, ds), "val": evaluate(base, ds, "val"),
        "test_loss": mean_loss(predict_split(base, ds), ds.part("test")[1], ds.task_type),
        "metric_pair": list(metric(predict_split(base, ds), ds.part("test")[1], ds.task_type)),
    })
    res["mlp"] = cache.stage(f"{name}/mlp", lambda: {
        "metric_pair": list(train_mlp_baseline(ds, cfg.seed, MLPConfig(max_steps=cfg.mlp_max_steps)))
    })
    ft_path = cache.root / name / "full.pfnckpt"
    res["full"] = cache.stage(f"{name}/full_sweep", lambda: _sweep_stage(base, ds, Full(), proto, grid, ft_path))
    ft = load_checkpoint(ft_path)
    res["full"]["metric_pair"] = list(metric(predict_split(ft, ds), ds.part("test")[1], ds.task_type))
    best_lr = res["full"]["best_lr"]
    for strat in PEFT_STRATEGIES:
        label = strategy_label(strat)
        res[label] = cache.stage(f"{name}/{label}", lambda s=strat: _sweep_stage(base, ds, s, proto, grid[-PEFT_GRID_TOP:]))
    for pl in PRED_LENS:
        def run_pl(pl=pl):
            p, h = finetune(base, ds, Full(), replace(proto, lr=best_lr, pred_len=pl))
            return {"pred_len": pl, "effective": replace(proto, pred_len=pl).effective_pred_len(ds.splits["train"].size),
                    "test": _test(p, ds), "best_val": h.best_val_metric, "n_evals": len(h.records)}
        res[f"pred_len_{pl}"] = cache.stage(f"{name}/pred_len_{pl}", run_pl)

    def run_ensemble():
        members = [ft] + [finetune(base, ds, Full(), replace(proto, lr=best_lr, seed=s))[0]
                          for s in range(1, cfg.ensemble_members)]
        _, y = ds.part("test")
        member_losses, member_rmse = [], []
        for m in members:
            pred = predict_split(m, ds)
            member_losses.append(mean_loss(pred, y, ds.task_type))
            member_rmse.append(metric(pred, y, ds.task_type)[0])
        ens = ensemble_predict(members, ds)
        return {"member_loss": member_losses, "member_metric": member_rmse,
                "ensemble_loss": mean_loss(ens, y, ds.task_type),
                "ensemble_metric": metric(ens, y, ds.task_type)[0]}
    res["ensemble"] = cache.stage(f"{name}/ensemble", run_ensemble)

    def run_analysis():
        row = knn_row(base, ft, ds)
        curve, pb, pf = entropy_error_curve(base, ft, ds)
        return {"knn": row, "quartile_delta_error": quartile_delta_error(curve),
                "zero_crossing_index": curve.zero_crossing_index, "n_test": int(curve.delta_H.size),
                "mean_delta_H": float(curve.delta_H.mean()), "mean_delta_error": float(curve.delta_error.mean()),
                "mean_H_base": float(pb.entropy.mean()), "mean_H_ft": float(pf.entropy.mean())}
    res["analysis"] = cache.stage(f"{name}/analysis", run_analysis)
    return res


def checkpoint_path(cfg: RunConfig) -> Path:
    p = Path(cfg.pretrain.checkpoint)
    return p if p.is_absolute() else cfg.base_dir / p


def ensure_pretrained(cfg: RunConfig, log=print) -> PFNParams:
    """Load the configured pretrained checkpoint, meta-training it first if it is missing."""
    path = checkpoint_path(cfg)
    if not path.exists():
        log(f"[suite] pretraining {cfg.pretrain.steps} steps -> {path}")
        params, _ = pretrain(cfg.model, cfg.prior, cfg.pretrain.steps, cfg.seed, cfg.pretrain.schedule)
        save_checkpoint(params, path)
    return load_checkpoint(path)


def run_suite(cfg: RunConfig, cache_dir, base: PFNParams | None = None, log=print) -> dict:
    """Run (or resume) every stage for every configured dataset, plus the subsample study."""
    cache = Cache(cache_dir, log)
    if base is None:
        base = ensure_pretrained(cfg, log)

    def run_heldout():
        tasks = heldout_tasks(cfg.prior, N_HELDOUT)
        trained = heldout_accuracy(base, tasks)
        rand = heldout_accuracy(init_params(cfg.model, cfg.seed), tasks)
        return {"model": trained["model"], "majority": trained["majority"], "random_init": rand["model"],
                "n_tasks": len(tasks)}
    out = {"heldout": cache.stage("heldout", run_heldout), "datasets": {}}
    datasets = build_datasets(cfg)
    for ds in datasets:
        out["datasets"][ds.name] = run_dataset(cache, base, ds, cfg)
    sub = cfg.subsample
    names = list(sub.datasets) or [sub.dataset or datasets[0].name]
    by_name = {d.name: d for d in datasets}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigError(f"subsample datasets {missing} are not configured")

    def run_subsample(target: Dataset):
        full_lr = out["datasets"][target.name]["full"]["best_lr"]
        cells = subsample_study(target, sub.levels, sub.methods, sub.seeds, base,
                                replace(cfg.protocol, lr=full_lr), cfg.scratch, cfg.model)
        return {"dataset": target.name, "task": target.task_type.value, "cells": [c.__dict__ for c in cells],
                "summary": summarize(cells)}
    out["subsample"] = {n: cache.stage(f"subsample/{n}", lambda t=by_name[n]: run_subsample(t)) for n in names}
    return out


def suite_dir(cfg: RunConfig) -> Path:
    """Cache location keyed by the config hash, so an edited config never reads stale stages."""
    return cfg.out_dir / f"suite_{cfg.hash()}"


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="python3 -m pfnlab.bench.suite", description="run or resume the benchmark suite")
    parser.add_argument("--config", required=True)
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    run_suite(cfg, suite_dir(cfg), log=lambda m: print(m, flush=True))
    return 0


# ------------------------------------------------------------------ checks


def report_rows(results: dict) -> list[ReportRow]:
    rows = []
    for name, r in results["datasets"].items():
        mlp_impr = r["mlp"]["metric_pair"][1]
        rows.append(ReportRow.build(name, r["task"], "mlp", 0, *r["mlp"]["metric_pair"], mlp_impr))
        rows.append(ReportRow.build(name, r["task"], "no_ft", 0, *r["icl"]["metric_pair"], mlp_impr))
        rows.append(ReportRow.build(name, r["task"], "full", 0, *r["full"]["metric_pair"], mlp_impr))
    return rows


def rank_table(results: dict) -> dict[str, float]:
    """Mean rank (test metric) of Full and each PEFT strategy across the suite."""
    rows = []
    for name, r in results["datasets"].items():
        for label in ["full"] + [strategy_label(s) for s in PEFT_STRATEGIES]:
            rows.append(ReportRow.build(name, r["task"], label, 0, r[label]["test"], r[label]["test"], 1.0))
    summary, _ = aggregate(rows)
    return {s.method: s.mean_rank for s in summary}


def improved(results: dict) -> dict[str, bool]:
    """Datasets on which full finetuning beat pure in-context prediction on test."""
    return {name: is_better(r["full"]["test"], r["icl"]["test"], r["task"]) for name, r in results["datasets"].items()}


def mean_relative_improvement(results: dict) -> dict[str, float]:
    summary, _ = aggregate(report_rows(results))
    return {s.method: s.mean_relative_improvement for s in summary}


if __name__ == "__main__":
    raise SystemExit(main())
