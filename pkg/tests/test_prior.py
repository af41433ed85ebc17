import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pfnlab.errors import ConfigError, SplitError
from pfnlab.prior import (
    PriorConfig,
    SyntheticTask,
    TaskSpec,
    make_context_split,
    quantile_bins,
    sample_meta_batch,
    sample_task,
)
from pfnlab.task import TaskType

CLS = TaskType.CLASSIFICATION
REG = TaskType.REGRESSION


def _same_task(a: SyntheticTask, b: SyntheticTask) -> bool:
    return a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes() and a.spec == b.spec


def test_sample_task_deterministic():
    spec = TaskSpec(n_samples=64, n_features=4, task_type=CLS, n_classes=3)
    assert _same_task(sample_task(spec, 17), sample_task(spec, 17))
    assert not _same_task(sample_task(spec, 17), sample_task(spec, 18))


def test_class_counts_for_four_classes():
    spec = TaskSpec(n_samples=100, n_features=3, task_type=CLS, n_classes=4)
    for seed in range(20):
        counts = np.bincount(sample_task(spec, seed).y, minlength=4)
        assert counts.min() >= 22 and counts.max() <= 28


def test_feature_count_contract():
    assert sample_task(TaskSpec(n_samples=30, n_features=5, task_type=REG), 0).X.shape == (30, 5)


@given(st.integers(8, 200), st.integers(1, 16), st.integers(0, 10_000), st.sampled_from([CLS, REG]), st.integers(2, 10))
def test_task_invariants(n, m, seed, task, n_classes):
    spec = TaskSpec(n_samples=n, n_features=m, task_type=task, n_classes=n_classes, depth=1 + seed % 3)
    t = sample_task(spec, seed)
    assert t.X.dtype == np.float32 and t.X.shape == (n, m)
    assert np.all(np.isfinite(t.X))
    if task is CLS:
        assert t.y.min() >= 0 and t.y.max() < n_classes
    else:
        assert np.all(np.isfinite(t.y))


@given(st.integers(2, 300), st.integers(2, 10), st.integers(0, 1000))
def test_quantile_bins_balance(n, c, seed):
    latent = np.random.default_rng(seed).normal(size=n)  # continuous: no ties
    counts = np.bincount(quantile_bins(latent, c), minlength=c)
    assert counts.sum() == n
    assert np.all(np.abs(counts - n / c) <= 1)


def test_quantile_bins_ties_by_index():
    y = quantile_bins(np.zeros(6), 2)
    np.testing.assert_array_equal(y, [0, 0, 0, 1, 1, 1])


def test_regression_targets_standardized_before_noise():
    t = sample_task(TaskSpec(n_samples=2000, n_features=4, task_type=REG, noise_scale=0.0), 3)
    assert abs(float(t.y.mean())) < 1e-4
    assert float(t.y.std()) == pytest.approx(1.0, abs=1e-4)


def test_spec_validation():
    with pytest.raises(ConfigError):
        TaskSpec(n_samples=4, n_features=2, task_type=REG)
    with pytest.raises(ConfigError):
        TaskSpec(n_samples=20, n_features=0, task_type=REG)
    with pytest.raises(ConfigError):
        TaskSpec(n_samples=20, n_features=2, task_type=CLS, n_classes=11)


# ---------------------------------------------------------------- splits


def test_split_half_of_ten():
    t = sample_task(TaskSpec(n_samples=10, n_features=2, task_type=REG), 0)
    tr, te = make_context_split(t, 0.5, 1)
    assert tr.size == 5 and te.size == 5
    assert not set(tr) & set(te)


def test_split_stratified_binary():
    y = np.array([0] * 50 + [1] * 50)
    for seed in range(10):
        tr, _ = make_context_split(y, 0.5, seed, CLS)
        n1 = int(y[tr].sum())
        assert abs(n1 - tr.size / 2) <= 1


def test_split_deterministic():
    y = np.arange(40) % 3
    a = make_context_split(y, 0.6, 5, CLS)
    b = make_context_split(y, 0.6, 5, CLS)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_split_too_small():
    with pytest.raises(SplitError):
        make_context_split(np.zeros(6), 0.5, 0, REG)
    with pytest.raises(SplitError):
        make_context_split(np.zeros(20), 1.0, 0, REG)


@given(st.integers(8, 300), st.floats(0.2, 0.9), st.integers(0, 100), st.sampled_from([CLS, REG]))
def test_split_partition(n, frac, seed, task):
    y = np.arange(n) % 4 if task is CLS else np.linspace(0, 1, n)
    try:
        tr, te = make_context_split(y, frac, seed, task)
    except SplitError:
        assert round(frac * n) < 4 or round(frac * n) >= n
        return
    both = np.concatenate([tr, te])
    assert np.array_equal(np.sort(both), np.arange(n))
    assert tr.size >= 4 and te.size >= 1


# ---------------------------------------------------------------- meta batches


def test_meta_batch_regenerable():
    cfg = PriorConfig(batch_size=4)
    a, b = sample_meta_batch(cfg, 7), sample_meta_batch(cfg, 7)
    for x, y in zip(a, b):
        assert _same_task(x.task, y.task)
        assert np.array_equal(x.train_idx, y.train_idx)


def test_meta_batch_size_and_mix():
    cfg = PriorConfig(batch_size=16, classification_ratio=0.5)
    kinds = set()
    for step in range(5):
        items = sample_meta_batch(cfg, step)
        assert len(items) == 16
        kinds |= {it.task.spec.task_type for it in items}
    assert kinds == {CLS, REG}


def test_meta_batch_ratio_extremes():
    only_cls = sample_meta_batch(PriorConfig(batch_size=8, classification_ratio=1.0), 0)
    only_reg = sample_meta_batch(PriorConfig(batch_size=8, classification_ratio=0.0), 0)
    assert all(it.task.spec.task_type is CLS for it in only_cls)
    assert all(it.task.spec.task_type is REG for it in only_reg)


def test_collapsed_ranges_share_spec():
    cfg = PriorConfig(
        n_samples=(50, 50), n_features=(3, 3), n_classes=(4, 4), noise_scale=(0.1, 0.1),
        depth=(2, 2), classification_ratio=1.0, batch_size=6,
    )
    items = sample_meta_batch(cfg, 3)
    assert len({it.task.spec for it in items}) == 1
    assert len({it.task.seed for it in items}) == 6


def test_prior_config_roundtrip_and_hash():
    cfg = PriorConfig(batch_size=5, n_features=(2, 6))
    again = PriorConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.hash() == cfg.hash()
    assert PriorConfig().hash() != cfg.hash()
    with pytest.raises(ConfigError):
        PriorConfig.from_dict({"bogus": 1})


def test_mean_class_balance_reasonable():
    spec = TaskSpec(n_samples=97, n_features=3, task_type=CLS, n_classes=5)
    y = sample_task(spec, 2).y
    assert np.bincount(y).max() <= math.ceil(97 / 5)
