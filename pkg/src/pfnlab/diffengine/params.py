"""Named parameter collections and the Adam optimizer."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, get_dtype

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ParamEntry:
    tensor: np.ndarray
    trainable: bool = True
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None

    def __post_init__(self):
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.tensor)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.tensor)


@dataclass
class ParamStore:
    """Ordered name -> parameter map with trainable flags and Adam state.

    Insertion order is preserved and is the canonical order for iteration,
    serialization and gradient checks.
    """

    entries: dict[str, ParamEntry] = field(default_factory=dict)
    step_count: int = 0
    meta: dict = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.entries:
            raise ContractError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float32, copy=True)
        self.entries[name] = ParamEntry(arr, trainable)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def trainable_names(self) -> list[str]:
        return [n for n, e in self.entries.items() if e.trainable]

    def set_trainable(self, flags: Mapping[str, bool]) -> None:
        for name, flag in flags.items():
            self.entries[name].trainable = bool(flag)

    def n_elements(self, trainable_only: bool = False) -> int:
        return sum(e.tensor.size for e in self.entries.values() if e.trainable or not trainable_only)

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor for ``name`` in the current engine precision."""
        e = self.entries[name]
        data = e.tensor
        dtype = get_dtype()
        if data.dtype != dtype:
            data = data.astype(dtype)
        return Tensor(data, requires_grad=e.trainable, name=name)

    def copy(self) -> "ParamStore":
        out = type(self)(step_count=self.step_count, meta=_deepcopy_meta(self.meta))
        for name, e in self.entries.items():
            out.entries[name] = ParamEntry(e.tensor.copy(), e.trainable, e.adam_m.copy(), e.adam_v.copy())
        return out

    def astype(self, dtype) -> "ParamStore":
        out = self.copy()
        for e in out.entries.values():
            e.tensor = e.tensor.astype(dtype)
            e.adam_m = e.adam_m.astype(dtype)
            e.adam_v = e.adam_v.astype(dtype)
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: e.tensor.copy() for n, e in self.entries.items()}

    def restore(self, snap: Mapping[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self.entries[n].tensor[...] = arr

    def reset_optimizer(self) -> None:
        self.step_count = 0
        for e in self.entries.values():
            e.adam_m = np.zeros_like(e.tensor)
            e.adam_v = np.zeros_like(e.tensor)

    def equal(self, other: "ParamStore") -> bool:
        """Bitwise equality of names, flags and values."""
        if self.names() != other.names():
            return False
        for n, e in self.entries.items():
            o = other.entries[n]
            if e.trainable != o.trainable or e.tensor.shape != o.tensor.shape:
                return False
            if e.tensor.tobytes() != o.tensor.tobytes():
                return False
        return True


def _deepcopy_meta(meta: dict) -> dict:
    return copy.deepcopy(meta)


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam update of every trainable entry, in place.

    ``grads`` must name exactly the trainable entries; frozen entries are
    never touched.
    """
    trainable = set(store.trainable_names())
    keys = set(grads)
    if keys != trainable:
        extra = sorted(keys - trainable)
        missing = sorted(trainable - keys)
        raise ContractError(f"gradient map mismatch: unexpected {extra[:5]}, missing {missing[:5]}")
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in store.trainable_names():
        e = store.entries[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != e.tensor.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, expected {e.tensor.shape}")
        m = beta1 * e.adam_m.astype(np.float64) + (1.0 - beta1) * g
        v = beta2 * e.adam_v.astype(np.float64) + (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        e.adam_m = m.astype(e.tensor.dtype)
        e.adam_v = v.astype(e.tensor.dtype)
        if lr != 0.0:
            e.tensor[...] = (e.tensor.astype(np.float64) - update).astype(e.tensor.dtype)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = (grads[k] * scale).astype(grads[k].dtype)
    return total
