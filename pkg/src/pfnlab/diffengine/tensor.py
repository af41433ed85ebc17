"""Dense tensors with a tape-based reverse-mode autodiff.

Operations executed inside a ``with Graph() as g:`` block are recorded on the
tape of ``g`` whenever at least one input requires a gradient. ``backward``
replays the tape in exact reverse order, so gradients are bit-reproducible.
Outside of a graph no bookkeeping happens at all (inference mode).

Storage is float32 by default. Reductions (sums, means, normalization
statistics) accumulate in float64. ``precision(np.float64)`` switches the
whole engine to float64, which is what the gradient checker uses.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, ShapeError

_local = threading.local()


def get_dtype() -> type:
    return getattr(_local, "dtype", np.float32)


@contextmanager
def precision(dtype):
    """Run the enclosed code with ``dtype`` as the engine storage type."""
    prev = get_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


def _graph_stack() -> list:
    stack = getattr(_local, "graphs", None)
    if stack is None:
        stack = _local.graphs = []
    return stack


def current_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array plus autodiff metadata.

    ``name`` is set for leaves that come from a :class:`ParamStore`; gradients
    are reported by name.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        dtype = get_dtype()
        if isinstance(data, np.ndarray) and data.dtype == dtype:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: tuple, output: Tensor, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Graph:
    """Ordered tape of recorded operations (topological by construction)."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _graph_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("graph stack corrupted")
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def _record(op: str, inputs: tuple, out: Tensor, backward: Callable) -> Tensor:
    g = current_graph()
    if g is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        g.nodes.append(Node(op, inputs, out, backward))
    return out


def _wrap(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.name = None
    return out


def _sum64(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    return np.sum(x, axis=axis, keepdims=keepdims, dtype=np.float64)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and g.shape[i + lead] != 1
    )
    out = _sum64(g, axis=axes, keepdims=True)
    if lead:
        out = out.reshape(out.shape[lead:])
    return out.reshape(shape).astype(g.dtype, copy=False)


def backward(graph: Graph, loss: Tensor, store=None) -> dict[str, np.ndarray]:
    """Reverse-mode sweep over ``graph`` starting at scalar ``loss``.

    Returns a map from parameter name to gradient array. When ``store`` is
    given, every trainable entry of the store appears in the map, with zeros
    for entries the loss does not reach.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
            if inp.name is not None:
                leaves[key] = inp
    if loss.name is not None and id(loss) in grads:
        leaves[id(loss)] = loss
    out: dict[str, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        prev = out.get(leaf.name)
        out[leaf.name] = g if prev is None else prev + g
    if store is not None:
        for name in store.trainable_names():
            if name not in out:
                out[name] = np.zeros_like(store[name])
            else:
                out[name] = out[name].astype(store[name].dtype, copy=False)
    return out


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data + b.data)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (
            unbroadcast(g, sa) if a.requires_grad else None,
            unbroadcast(g, sb) if b.requires_grad else None,
        )

    return _record("add", (a, b), out, bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data - b.data)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (
            unbroadcast(g, sa) if a.requires_grad else None,
            -unbroadcast(g, sb) if b.requires_grad else None,
        )

    return _record("sub", (a, b), out, bw)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        c = a.data.dtype.type(b)
        out = _wrap(a.data * c)
        return _record("scale", (a,), out, lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    out = _wrap(a.data * b.data)
    ad, bd = a.data, b.data

    def bw(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", (a, b), out, bw)


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = _wrap(np.matmul(a.data, b.data))
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _record("matmul", (a, b), out, bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _wrap(_sum64(x.data, axis, keepdims).astype(x.data.dtype))
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _record("sum", (x,), out, bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[i] for i in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / max(n, 1))


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    out = _wrap(x.data.reshape(shape))
    return _record("reshape", (x,), out, lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _wrap(np.transpose(x.data, axes))
    return _record("transpose", (x,), out, lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; use :func:`take` for integer-array gathers."""
    x = as_tensor(x)
    out = _wrap(x.data[idx])
    shape, dtype = x.shape, x.data.dtype

    def bw(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[idx] = g
        return (gx,)

    return _record("getitem", (x,), out, bw)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    out = _wrap(np.take(x.data, indices, axis=axis))
    shape, dtype = x.shape, x.data.dtype

    def bw(g):
        gx = np.zeros(shape, dtype=dtype)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, indices.reshape(-1), np.moveaxis(g, axis, 0).reshape((-1,) + moved.shape[1:]))
        return (gx,)

    return _record("take", (x,), out, bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = _wrap(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        parts = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _record("concat", tensors, out, bw)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace positions where ``mask`` is true by ``value`` (no gradient there)."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    out = _wrap(np.where(mask, x.data.dtype.type(value), x.data))
    shape = x.shape
    return _record("masked_fill", (x,), out, lambda g: (unbroadcast(np.where(mask, 0, g), shape),))
