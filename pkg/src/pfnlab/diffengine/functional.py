"""Fused neural-network operations with hand-written backward rules."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateMaskError, LabelError, ShapeError
from ..task import TaskType
from .tensor import Tensor, _record, _sum64, _wrap, as_tensor, unbroadcast

_GELU_C = float(np.sqrt(2.0 / np.pi))


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is false get exactly 0.

    ``mask`` must broadcast against ``x``. A slice with no unmasked entry raises
    :class:`DegenerateMaskError`.
    """
    x = as_tensor(x)
    xd = x.data
    dtype = xd.dtype
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != xd.ndim:
            raise ShapeError(f"mask rank {mask.ndim} does not match input rank {xd.ndim}")
        if not mask.any(axis=axis).all():
            raise DegenerateMaskError("softmax slice is fully masked")
        if mask.all():
            mask = None
        else:
            xd = np.where(mask, xd, -np.inf)
    e = xd - np.max(xd, axis=axis, keepdims=True)
    np.exp(e, out=e)
    inv = (1.0 / _sum64(e, axis=axis, keepdims=True)).astype(dtype)
    y = np.multiply(e, inv, out=e)

    def bw(g):
        dot = _sum64(g * y, axis=axis, keepdims=True).astype(dtype)
        gx = g - dot
        gx *= y
        return (gx,)

    return _record("softmax", (x,), _wrap(y), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"gamma/beta must have shape ({d},), got {gamma.shape}, {beta.shape}")
    dtype = x.data.dtype
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    xc = x64 - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).astype(dtype)
    y = xhat * gamma.data + beta.data
    gd = gamma.data
    rstd_d = rstd.astype(dtype)

    def bw(g):
        gx = ggamma = gbeta = None
        if x.requires_grad:
            gxhat = g * gd
            m1 = gxhat.mean(axis=-1, keepdims=True, dtype=np.float64)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True, dtype=np.float64)
            gx = (rstd_d * (gxhat - m1.astype(dtype) - xhat * m2.astype(dtype))).astype(dtype)
        if gamma.requires_grad:
            ggamma = unbroadcast(g * xhat, (d,))
        if beta.requires_grad:
            gbeta = unbroadcast(g, (d,))
        return gx, ggamma, gbeta

    return _record("layer_norm", (x, gamma, beta), _wrap(y), bw)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _record("gelu", (x,), _wrap(y), bw)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    y = np.maximum(x.data, 0).astype(x.data.dtype, copy=False)  # NaN propagates
    return _record("relu", (x,), _wrap(y), lambda g: (np.where(pos, g, 0).astype(g.dtype, copy=False),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record("tanh", (x,), _wrap(y), lambda g: (g * (1.0 - y * y),))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. ``rng=None`` or ``p == 0`` makes it the identity."""
    if rng is None or p <= 0.0:
        return x
    x = as_tensor(x)
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    return _record("dropout", (x,), _wrap(x.data * keep), lambda g: (g * keep,))


def _weights(weight, n: int, dtype) -> tuple[np.ndarray, float]:
    if weight is None:
        return np.ones(n, dtype=np.float64), float(n)
    w = np.asarray(weight, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ShapeError(f"weight has {w.shape[0]} entries, expected {n}")
    total = float(w.sum())
    return w, max(total, 1e-12)


def mse_loss(pred: Tensor, target, weight=None) -> Tensor:
    """Mean squared error, optionally a weighted mean over elements."""
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {t.shape}")
    diff = (pred.data - t).astype(np.float64)
    w, total = _weights(weight, diff.size, pred.data.dtype)
    w = w.reshape(diff.shape)
    val = float(np.sum(w * diff * diff) / total)
    out = _wrap(np.asarray(val, dtype=pred.data.dtype))

    def bw(g):
        return ((2.0 * float(g) / total * w * diff).astype(pred.data.dtype),)

    return _record("mse", (pred,), out, bw)


def cross_entropy(logits: Tensor, labels, n_active=None, weight=None) -> Tensor:
    """Mean cross-entropy of ``logits[..., C]`` against integer ``labels[...]``.

    Only the first ``n_active`` classes take part (per row when an array is
    given); the rest are excluded from the normalizer.
    """
    logits = as_tensor(logits)
    ld = logits.data
    C = ld.shape[-1]
    lab = np.asarray(labels)
    if lab.shape != ld.shape[:-1]:
        raise ShapeError(f"labels shape {lab.shape} does not match logits {ld.shape}")
    if lab.size and not np.all(np.equal(np.mod(lab, 1), 0)):
        raise LabelError("class labels must be integers")
    lab = lab.astype(np.intp)
    if n_active is None:
        n_act = np.full(lab.shape, C, dtype=np.intp)
    else:
        n_act = np.broadcast_to(np.asarray(n_active, dtype=np.intp), lab.shape)
    if np.any(n_act > C) or np.any(n_act < 1):
        raise LabelError(f"active class count must lie in [1, {C}]")
    if lab.size and (np.any(lab < 0) or np.any(lab >= n_act)):
        bad = int(lab[(lab < 0) | (lab >= n_act)][0])
        raise LabelError(f"class index {bad} outside the active class range")
    active = np.arange(C) < n_act[..., None]
    z = np.where(active, ld.astype(np.float64), -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=-1, keepdims=True)
    logp = z - zmax - np.log(s)
    flat_logp = logp.reshape(-1, C)
    idx = lab.reshape(-1)
    nll = -flat_logp[np.arange(idx.size), idx]
    w, total = _weights(weight, idx.size, ld.dtype)
    val = float(np.sum(w * nll) / total)
    out = _wrap(np.asarray(val, dtype=ld.dtype))

    def bw(g):
        p = (e / s).reshape(-1, C)
        p[np.arange(idx.size), idx] -= 1.0
        gz = p * (w * float(g) / total)[:, None]
        return (gz.reshape(ld.shape).astype(ld.dtype),)

    return _record("cross_entropy", (logits,), out, bw)


def loss(pred: Tensor, target, task, n_classes=None, weight=None) -> Tensor:
    """Task-appropriate training loss: MSE for regression, cross-entropy otherwise."""
    task = TaskType(task)
    if task is TaskType.REGRESSION:
        return mse_loss(pred, target, weight=weight)
    return cross_entropy(pred, target, n_active=n_classes, weight=weight)
