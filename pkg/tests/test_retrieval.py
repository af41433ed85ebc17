import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfnlab.errors import ContractError
from pfnlab.metrics import metric
from pfnlab.model import AttentionRecord
from pfnlab.retrieval import (
    AttentionProfile,
    aggregate_heads,
    attention_weighted_knn,
    curve_from_deltas,
    entropy_error_curve,
    knn_report,
    normalized_entropy,
    per_sample_error,
    probe,
    quartile_delta_error,
    smoothing_sigma,
)
from pfnlab.task import TaskType
from pfnlab.trainer import Full, TrainProtocol, finetune

CLS = TaskType.CLASSIFICATION
REG = TaskType.REGRESSION

simplex_rows = arrays(np.float64, (5, 6), elements=st.floats(0, 1)).map(
    lambda w: (w + 1e-3) / (w + 1e-3).sum(axis=1, keepdims=True)
)


# ---------------------------------------------------------------- heads


def test_single_head_profile():
    w = np.array([[[0.2], [0.8]], [[0.5], [0.5]]])
    np.testing.assert_allclose(aggregate_heads(AttentionRecord(w, 2)).weights, w[:, :, 0])


def test_two_head_mean():
    w = np.array([[[0.5, 1.0], [0.5, 0.0]]])  # head 0 uniform, head 1 one-hot
    np.testing.assert_allclose(aggregate_heads(AttentionRecord(w, 2)).weights, [[0.75, 0.25]])


@given(arrays(np.float64, (4, 7, 3), elements=st.floats(0, 1)))
def test_aggregate_rows_sum_to_one(w):
    w = w + 1e-6
    w = w / w.sum(axis=1, keepdims=True)
    prof = aggregate_heads(AttentionRecord(w, 7))
    np.testing.assert_allclose(prof.weights.sum(axis=1), 1.0, atol=1e-6)
    for p in aggregate_heads(AttentionRecord(w, 7), mode="per_head"):
        np.testing.assert_allclose(p.weights.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- kNN


def test_knn_one_hot_reproduces_targets():
    y = np.array([3.0, -1.0, 7.5, 0.25])
    prof = AttentionProfile(np.eye(4)[[2, 0, 3]])
    np.testing.assert_allclose(attention_weighted_knn(prof, y, REG), y[[2, 0, 3]], atol=1e-12)
    lab = np.array([1, 0, 2, 2])
    scores = attention_weighted_knn(prof, lab, CLS, 3)
    np.testing.assert_array_equal(scores.argmax(axis=1), lab[[2, 0, 3]])


def test_knn_uniform_gives_mean_and_majority():
    y = np.array([1.0, 2.0, 6.0])
    prof = AttentionProfile(np.full((2, 3), 1 / 3))
    np.testing.assert_allclose(attention_weighted_knn(prof, y, REG), [3.0, 3.0])
    lab = np.array([1, 1, 0])
    assert np.all(attention_weighted_knn(prof, lab, CLS, 2).argmax(axis=1) == 1)


def test_knn_hand_example():
    scores = attention_weighted_knn(AttentionProfile(np.array([[0.2, 0.3, 0.5]])), np.array([1, 0, 1]), CLS, 2)
    np.testing.assert_allclose(scores, [[0.3, 0.7]])
    assert scores.argmax() == 1


def test_knn_length_mismatch():
    with pytest.raises(ContractError):
        attention_weighted_knn(AttentionProfile(np.full((1, 3), 1 / 3)), np.array([1.0, 2.0]), REG)


@given(simplex_rows, st.integers(0, 100))
def test_knn_scores_are_probabilities(w, seed):
    lab = np.random.default_rng(seed).integers(0, 3, 6)
    scores = attention_weighted_knn(AttentionProfile(w), lab, CLS, 3)
    assert np.all(scores >= 0)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9)


@given(st.integers(0, 1000))
def test_knn_one_hot_exact_property(seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=8) * 10
    idx = rng.integers(0, 8, 5)
    pred = attention_weighted_knn(AttentionProfile(np.eye(8)[idx]), y, REG)
    np.testing.assert_allclose(pred, y[idx], rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- entropy


def test_entropy_examples():
    n = 5
    assert normalized_entropy(AttentionProfile(np.full((1, n), 1 / n)))[0] == pytest.approx(1.0, abs=1e-12)
    assert normalized_entropy(AttentionProfile(np.eye(n)[:1]))[0] == 0.0
    assert normalized_entropy(AttentionProfile(np.array([[0.5, 0.5, 0.0]])))[0] == pytest.approx(0.6309, abs=1e-4)
    assert normalized_entropy(AttentionProfile(np.array([[0.5, 0.5, 0.0]])))[0] == pytest.approx(math.log(2) / math.log(3))


def test_entropy_single_train_row():
    with pytest.raises(ContractError):
        normalized_entropy(AttentionProfile(np.ones((2, 1))))


@given(simplex_rows)
def test_entropy_bounds(w):
    h = normalized_entropy(AttentionProfile(w))
    assert np.all(h >= -1e-12) and np.all(h <= 1 + 1e-9)
    uniform = np.all(np.isclose(w, 1 / 6), axis=1)
    assert np.all(np.isclose(h[uniform], 1.0, atol=1e-9))
    assert np.all(h[~uniform] < 1.0)


# ---------------------------------------------------------------- per-sample error


def test_per_sample_error_examples():
    assert per_sample_error(np.array([1.5]), np.array([1.5]), REG)[0] == 0.0
    assert per_sample_error(np.array([[0.5, 0.5]]), np.array([0]), CLS)[0] == pytest.approx(math.log(2))
    assert per_sample_error(np.array([[0.0, 1.0]]), np.array([0]), CLS)[0] == pytest.approx(-math.log(1e-7))
    with pytest.raises(ContractError):
        per_sample_error(np.array([[0.7, 0.7]]), np.array([0]), CLS)


# ---------------------------------------------------------------- curve


def test_curve_order_hand_example():
    c = curve_from_deltas([-0.2, 0.1, -0.05, 0.3], [1.0, 2.0, 3.0, 4.0], sigma=0)
    np.testing.assert_array_equal(c.order, [0, 2, 1, 3])
    np.testing.assert_array_equal(c.delta_error, [1.0, 3.0, 2.0, 4.0])
    assert c.zero_crossing_index == 2


def test_curve_zero_sigma_is_raw():
    rng = np.random.default_rng(0)
    c = curve_from_deltas(rng.normal(size=30), rng.normal(size=30), sigma=0)
    np.testing.assert_array_equal(c.smoothed_delta_error, c.delta_error)


def test_curve_all_zero():
    c = curve_from_deltas(np.zeros(10), np.zeros(10))
    assert c.zero_crossing_index == 10
    assert np.all(c.smoothed_delta_error == 0)


def test_curve_empty():
    with pytest.raises(ContractError):
        curve_from_deltas([], [])


def test_smoothing_sigma_rule():
    assert smoothing_sigma(10) == 2.0
    assert smoothing_sigma(700) == 14.0


def test_curve_reflective_gaussian():
    from scipy.ndimage import gaussian_filter1d

    e = np.arange(12, dtype=float) ** 2
    c = curve_from_deltas(np.arange(12.0), e, sigma=2.0)
    np.testing.assert_allclose(c.smoothed_delta_error, gaussian_filter1d(e, 2.0, mode="reflect"))


@given(arrays(np.float64, 20, elements=st.floats(-1, 1)), arrays(np.float64, 20, elements=st.floats(-1, 1)))
def test_curve_antisymmetry(dH, dE):
    a = curve_from_deltas(dH, dE)
    b = curve_from_deltas(-dH, -dE)
    np.testing.assert_array_equal(b.delta_H, -a.delta_H[::-1])
    # among strictly distinct entropy changes, the order reverses
    distinct = np.unique(dH).size == dH.size
    if distinct:
        np.testing.assert_array_equal(b.order, a.order[::-1])
        np.testing.assert_array_equal(b.delta_error, -a.delta_error[::-1])


@given(arrays(np.float64, 15, elements=st.floats(-1, 1)))
def test_curve_invariants(dH):
    c = curve_from_deltas(dH, np.zeros(15))
    assert np.all(np.diff(c.delta_H) >= 0)
    z = c.zero_crossing_index
    assert np.all(c.delta_H[:z] <= 0) and np.all(c.delta_H[z:] > 0)


def test_quartile_delta_error():
    c = curve_from_deltas(np.arange(8.0) - 4, np.arange(8.0), sigma=0)
    assert quartile_delta_error(c) == pytest.approx(0.5)


# ---------------------------------------------------------------- model-level


def test_identical_models_give_flat_curve(tiny_params, cls_dataset):
    c, pb, pf = entropy_error_curve(tiny_params, tiny_params, cls_dataset)
    assert np.all(c.delta_H == 0) and np.all(c.delta_error == 0)
    assert c.zero_crossing_index == cls_dataset.splits["test"].size


def test_knn_report_paired_columns(tiny_params, cls_dataset, reg_dataset):
    rows = knn_report(tiny_params, tiny_params, [cls_dataset, reg_dataset])
    for r in rows:
        assert r["model_base"] == r["model_ft"] and r["knn_base"] == r["knn_ft"]
    assert [r["metric"] for r in rows] == ["accuracy", "rmse"]


def test_probe_profile_is_normalized(tiny_params, reg_dataset):
    pr = probe(tiny_params, reg_dataset)
    np.testing.assert_allclose(pr.profile.weights.sum(axis=1), 1.0, atol=1e-6)
    assert pr.predictions.shape == (reg_dataset.splits["test"].size,)


def test_one_hot_attention_matches_nearest_neighbor():
    # attention that is one-hot on the nearest train row turns the kNN probe into 1-NN
    rng = np.random.default_rng(0)
    Xtr, Xte = rng.normal(size=(20, 3)), rng.normal(size=(9, 3))
    ytr = rng.integers(0, 3, 20)
    yte = rng.integers(0, 3, 9)
    d = ((Xte[:, None] - Xtr[None]) ** 2).sum(-1)
    nn = d.argmin(axis=1)
    logits = -1e4 * d
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    rec = AttentionRecord(np.repeat(w[:, :, None], 2, axis=2), 20)
    scores = attention_weighted_knn(aggregate_heads(rec), ytr, CLS, 3)
    assert metric(scores, yte, CLS)[0] == metric(ytr[nn], yte, CLS)[0]


def test_finetuned_curve_runs(tiny_params, reg_dataset):
    ft, _ = finetune(tiny_params, reg_dataset, Full(), TrainProtocol(lr=1e-3, pred_len=16, eval_every=2, patience=2, max_steps=6))
    c, pb, pf = entropy_error_curve(tiny_params, ft, reg_dataset)
    np.testing.assert_allclose(c.delta_H, np.sort(pf.entropy - pb.entropy, kind="stable"))
