import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pfnlab.bench import (
    MLPConfig,
    ReportRow,
    SchemaConfig,
    aggregate,
    level_sizes,
    load_csv,
    nested_levels,
    percentiles,
    preprocess,
    relative_improvement,
    subsample_study,
    train_mlp_baseline,
)
from pfnlab.bench.config import from_dict, load_config, synthetic_dataset
from pfnlab.bench.io import UNSEEN, fraction_split
from pfnlab.bench.report import read_rows, write_rows
from pfnlab.bench.subsample import summarize
from pfnlab.data import Dataset
from pfnlab.errors import BaselineError, CapacityError, ConfigError, ContractError, LoadError
from pfnlab.metrics import metric
from pfnlab.task import TaskType
from pfnlab.trainer import TrainProtocol

from conftest import TINY, separable_dataset, split3

CLS = TaskType.CLASSIFICATION
REG = TaskType.REGRESSION


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# ---------------------------------------------------------------- load_csv


def test_split_column(tmp_path):
    p = _write(tmp_path, "a,b,y,split\n1,2,0,train\n3,4,1,test\n5,6,0,val\n")
    ds = load_csv(p, SchemaConfig(target="y", task=CLS, split_column="split"))
    assert {k: v.tolist() for k, v in ds.splits.items()} == {"train": [0], "val": [2], "test": [1]}
    assert [c.name for c in ds.columns] == ["a", "b"]


def test_fraction_split_sizes():
    for n in (10, 99, 1000, 1234):
        s = fraction_split(n, (0.64, 0.16, 0.20), 3)
        assert abs(s["train"].size - 0.64 * n) <= 1
        assert abs(s["val"].size - 0.16 * n) <= 1
        assert abs(s["test"].size - 0.20 * n) <= 1
        assert np.array_equal(np.sort(np.concatenate(list(s.values()))), np.arange(n))
        assert all(np.array_equal(s[k], fraction_split(n, (0.64, 0.16, 0.20), 3)[k]) for k in s)


def test_missing_target(tmp_path):
    p = _write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(LoadError, match="'label'"):
        load_csv(p, SchemaConfig(target="label", task=REG))


def test_load_errors_name_rows(tmp_path):
    with pytest.raises(LoadError, match="row 3"):
        load_csv(_write(tmp_path, "a,y\n1,2\n3\n"), SchemaConfig(target="y", task=REG))
    with pytest.raises(LoadError, match="row 2"):
        load_csv(_write(tmp_path, "a,y\nabc,2\n"), SchemaConfig(target="y", task=REG))
    with pytest.raises(LoadError, match="row 3"):
        load_csv(_write(tmp_path, "a,y,s\n1,2,train\n1,2,holdout\n"), SchemaConfig(target="y", task=REG, split_column="s"))


def test_string_class_labels(tmp_path):
    p = _write(tmp_path, "a,y\n1,cat\n2,dog\n3,cat\n4,ant\n5,dog\n")
    ds = load_csv(p, SchemaConfig(target="y", task=CLS, fractions=(0.6, 0.2, 0.2)))
    assert ds.classes == ["ant", "cat", "dog"]
    assert ds.y.tolist() == [1, 2, 1, 0, 2]


# ---------------------------------------------------------------- preprocess


def _mixed_csv(tmp_path, n=50, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["x1,x2,flag,color,y,split"]
    for i in range(n):
        split = "train" if i < 30 else "val" if i < 40 else "test"
        color = ["red", "green", "blue"][i % 3] if split == "train" else "purple" if i == 45 else "red"
        lines.append(f"{rng.normal() * 5 + 2:.6f},7,{'yes' if i % 2 else 'no'},{color},{rng.normal():.6f},{split}")
    return _write(tmp_path, "\n".join(lines) + "\n")


def test_preprocess_encodings(tmp_path):
    schema = SchemaConfig(target="y", task=REG, categorical=("color",), binary=("flag",), split_column="split")
    raw = load_csv(_mixed_csv(tmp_path), schema)
    ds = preprocess(raw)
    names = ds.meta["feature_names"]
    assert names == ["x1", "x2", "flag", "color=blue", "color=green", "color=red", f"color={UNSEEN}"]
    tr = ds.splits["train"]
    assert abs(ds.X[tr, 0].mean()) < 1e-6
    assert ds.X[tr, 0].std() == pytest.approx(1.0, abs=1e-5)
    assert np.all(ds.X[:, 1] == 0.0)  # zero variance
    assert set(np.unique(ds.X[:, 2])) == {0.0, 1.0}
    assert ds.X[45, names.index(f"color={UNSEEN}")] == 1.0
    assert np.all(ds.X[:, 3:].sum(axis=1) == 1.0)


def test_preprocess_no_leakage(tmp_path):
    schema = SchemaConfig(target="y", task=REG, categorical=("color",), binary=("flag",), split_column="split")
    raw = load_csv(_mixed_csv(tmp_path), schema)
    ds = preprocess(raw)
    tr = raw.splits["train"]
    x = raw.X["x1"]
    np.testing.assert_allclose(ds.X[:, 0], ((x - x[tr].mean()) / x[tr].std()).astype(np.float32), rtol=1e-5)
    assert raw.categories["color"] == ["blue", "green", "red"]


def test_capacity_error_names_widest(tmp_path):
    lines = ["c,y"] + [f"v{i},{i % 2}" for i in range(40)]
    raw = load_csv(_write(tmp_path, "\n".join(lines)), SchemaConfig(target="y", task=CLS, categorical=("c",)))
    with pytest.raises(CapacityError, match="'c'"):
        preprocess(raw, max_features=16)


# ---------------------------------------------------------------- metrics


def test_metric_examples():
    assert metric(np.array([1.0, 2.0, 4.0]), np.array([1.0, 2.0, 4.0]), REG) == (0.0, 1.0)
    t = np.array([1.0, 2.0, 6.0])
    assert metric(np.full(3, t.mean()), t, REG)[1] == pytest.approx(0.0, abs=1e-12)
    assert metric(np.array([0.0, 2.0]), np.array([0.0, 0.0]), REG) == (pytest.approx(math.sqrt(2)), 0.0)
    assert metric(np.array([0, 1, 1]), np.array([0, 1, 1]), CLS) == (1.0, 1.0)
    with pytest.raises(ContractError):
        metric(np.array([]), np.array([]), REG)


# ---------------------------------------------------------------- relative improvement & aggregation


def test_relative_improvement_examples():
    assert relative_improvement(0.7, 0.7) == 0.0
    assert relative_improvement(0.9, 0.8) == pytest.approx(0.125)
    assert relative_improvement(0.3, 0.0) > 0 and relative_improvement(-0.3, 0.0) < 0


@given(st.floats(-10, 10), st.floats(1e-3, 10), st.floats(0, 5))
def test_relative_improvement_properties(m, mlp, dm):
    assert relative_improvement(m, m) == 0.0
    assert relative_improvement(m + dm, mlp) >= relative_improvement(m, mlp)


def _row(ds, method, value, task="classification", seed=0, mlp=0.5):
    return ReportRow.build(ds, task, method, seed, value, value, mlp)


def test_aggregate_single_method():
    rows = [_row(f"d{i}", "a", v) for i, v in enumerate([0.55, 0.6, 0.65])]
    (s,), warnings = aggregate(rows)
    assert s.mean_rank == 1.0 and warnings == []
    assert s.p50 == pytest.approx(relative_improvement(0.6, 0.5))


def test_aggregate_tied_ranks():
    rows = [_row("d1", "A", 0.9), _row("d1", "B", 0.8), _row("d2", "A", 0.7), _row("d2", "B", 0.6),
            _row("d3", "A", 0.5), _row("d3", "B", 0.5)]
    summary, _ = aggregate(rows)
    ranks = {s.method: s.mean_rank for s in summary}
    assert ranks["A"] == pytest.approx((1 + 1 + 1.5) / 3)
    assert ranks["B"] == pytest.approx((2 + 2 + 1.5) / 3)


def test_aggregate_regression_lower_is_better():
    rows = [_row("d", "A", 0.3, "regression"), _row("d", "B", 0.5, "regression")]
    ranks = {s.method: s.mean_rank for s in aggregate(rows)[0]}
    assert ranks == {"A": 1.0, "B": 2.0}


def test_aggregate_seed_mean_and_missing_warning():
    rows = [_row("d1", "A", 0.6, seed=0), _row("d1", "A", 0.8, seed=1), _row("d1", "B", 0.65), _row("d2", "A", 0.5)]
    summary, warnings = aggregate(rows)
    a = next(s for s in summary if s.method == "A")
    assert a.n_datasets == 2
    assert a.mean_relative_improvement == pytest.approx((relative_improvement(0.7, 0.5) + 0.0) / 2)
    assert len(warnings) == 1 and "d2" in warnings[0] and "B" in warnings[0]


def test_percentiles_median():
    assert percentiles([0.1, 0.2, 0.3])[50] == 0.2


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40))
def test_percentiles_are_order_statistics(values):
    srt = sorted(values)
    n = len(srt)
    for q, v in percentiles(values).items():
        assert v == srt[max(math.ceil(q / 100 * n) - 1, 0)]


def test_report_rows_roundtrip(tmp_path):
    rows = [_row("d1", "A", 0.61), _row("d2", "B", 0.7, "regression")]
    write_rows(tmp_path / "r.csv", rows)
    back = read_rows(tmp_path / "r.csv")
    for a, b in zip(rows, back):
        assert (a.dataset, a.task, a.method, a.metric_primary) == (b.dataset, b.task, b.method, b.metric_primary)
        assert b.relative_improvement == pytest.approx(a.relative_improvement, abs=1e-9)


# ---------------------------------------------------------------- subsampling


def test_level_sizes():
    assert level_sizes(1000, 4) == [1000, 500, 250, 125]


def test_nested_levels():
    idx = np.arange(3, 1003)
    levels = nested_levels(idx, 4, seed=1)
    assert [lv.size for lv in levels] == [1000, 500, 250, 125]
    for big, small in zip(levels, levels[1:]):
        assert set(small) <= set(big)
    with pytest.raises(ContractError):
        nested_levels(np.arange(200), 3, 0)


def test_subsample_icl_uses_no_steps(tiny_params):
    rng = np.random.default_rng(0)
    n = 400
    X = rng.normal(size=(n, 3))
    y = (X[:, 0] > 0).astype(int)
    ds = Dataset("s", X, y, CLS, split3(y, CLS, 0, (0.5, 0.2)), 2)
    proto = TrainProtocol(lr=1e-3, pred_len=16, eval_every=2, patience=1, max_steps=4)
    cells = subsample_study(ds, 2, ["icl", "finetune", "scratch"], [0], tiny_params, proto, proto, TINY)
    assert {(c.level, c.method) for c in cells} == {(l, m) for l in (0, 1) for m in ("icl", "finetune", "scratch")}
    assert all(c.steps == 0 for c in cells if c.method == "icl")
    summary = summarize(cells)
    assert [s["n_train"] for s in summary if s["method"] == "icl"] == [200, 100]


# ---------------------------------------------------------------- MLP baseline


def test_mlp_deterministic_and_separable():
    ds = separable_dataset(120)
    cfg = MLPConfig(max_steps=200)
    a = train_mlp_baseline(ds, 0, cfg)
    assert a == train_mlp_baseline(ds, 0, cfg)
    assert a == (1.0, 1.0)


def test_mlp_constant_target():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(90, 3))
    y = np.full(90, 4.0)
    ds = Dataset("c", X, y, REG, split3(y, REG), 0)
    rmse, r2 = train_mlp_baseline(ds, 0, MLPConfig(hidden=16, max_steps=40))
    assert r2 == 0.0 and math.isfinite(rmse)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mlp_all_diverge():
    ds = separable_dataset(60)
    ds.X[ds.splits["train"], 0] = np.inf
    with pytest.raises(BaselineError):
        train_mlp_baseline(ds, 0, MLPConfig(hidden=8, max_steps=20))


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        from_dict({"protocol": {"lr": 1e-3, "speed": 2}})
    with pytest.raises(ConfigError):
        from_dict({"datasets": [{"name": "a"}, {"name": "a"}]})


def test_config_hash_ignores_out(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('experiment = "x"\nout = "o1"\n[protocol]\nlr = 1e-3\n')
    cfg = load_config(p)
    assert cfg.protocol.lr == 1e-3 and cfg.protocol.eval_every == 10 and cfg.protocol.patience == 16
    assert cfg.with_overrides(out=str(tmp_path / "elsewhere")).hash() == cfg.hash()
    assert cfg.with_overrides(seed=3).hash() != cfg.hash()
    assert cfg.with_overrides(seed=3).prior.base_seed == 3


def test_config_bad_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("this is = = not toml")
    with pytest.raises(ConfigError):
        load_config(p)


def test_synthetic_dataset_splits():
    ds = synthetic_dataset({"name": "s", "synthetic": True, "n_samples": 400, "n_features": 5, "task": "classification",
                            "n_classes": 3}, 8)
    sizes = {k: v.size for k, v in ds.splits.items()}
    assert sizes == {"train": 200, "val": 60, "test": 140}
    again = synthetic_dataset({"name": "s", "synthetic": True, "n_samples": 400, "n_features": 5,
                               "task": "classification", "n_classes": 3}, 8)
    assert np.array_equal(ds.X, again.X) and np.array_equal(ds.splits["test"], again.splits["test"])


def test_config_subsample_datasets():
    cfg = from_dict({"subsample": {"datasets": ["a", "b"], "seeds": [4]}})
    assert cfg.subsample.datasets == ("a", "b") and cfg.subsample.seeds == (4,)
    assert from_dict({}).subsample.datasets == ()
