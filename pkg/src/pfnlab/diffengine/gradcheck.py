"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..rng import stream
from .params import ParamStore
from .tensor import Graph, Tensor, backward, precision


def grad_check(
    f: Callable[[ParamStore], Tensor],
    store: ParamStore,
    h: float = 1e-3,
    max_coords: int | None = None,
    seed: int = 0,
    per_coordinate: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a store to a scalar loss tensor and must be deterministic. The
    check runs on a float64 copy of ``store`` in float64 engine precision.
    Frozen entries are excluded. With ``max_coords`` set, at most that many
    coordinates per tensor are probed (chosen by a seeded stream).

    The error of one parameter entry is ``|a - n| / (|a| + 1e-8)`` with
    ``|.|`` the L2 norm over the probed coordinates of that entry; the result
    is the maximum over entries. ``per_coordinate=True`` applies the same
    ratio to every scalar coordinate instead, which is far more sensitive to
    finite-difference truncation on near-zero gradients.
    """
    work = store.astype(np.float64)
    with precision(np.float64):
        with Graph() as g:
            out = f(work)
        analytic = backward(g, out, store=work)

        def value() -> float:
            return float(f(work).data)

        worst = 0.0
        for i, name in enumerate(work.trainable_names()):
            arr = work[name]
            flat = arr.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(stream(seed, i).choice(flat.size, size=max_coords, replace=False))
            ga = np.asarray(analytic[name], dtype=np.float64).reshape(-1)[coords]
            gn = np.empty(coords.size)
            for j, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + h
                fp = value()
                flat[c] = orig - h
                fm = value()
                flat[c] = orig
                gn[j] = (fp - fm) / (2.0 * h)
            if per_coordinate:
                err = float(np.max(np.abs(ga - gn) / (np.abs(ga) + 1e-8), initial=0.0))
            else:
                err = float(np.linalg.norm(ga - gn) / (np.linalg.norm(ga) + 1e-8))
            worst = max(worst, err)
    return worst
