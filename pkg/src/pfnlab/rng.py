"""Counter-based random streams.

Every stochastic operation in pfnlab draws from a Philox generator keyed by a
tuple of non-negative integers (base seed, step, slot, ...). Any stream can be
regenerated in isolation from its key alone.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _as_words(keys) -> list[int]:
    words = []
    for k in keys:
        if isinstance(k, str):
            k = int.from_bytes(hashlib.sha256(k.encode("utf-8")).digest()[:8], "little")
        k = int(k)
        if k < 0:
            raise ValueError(f"stream keys must be non-negative, got {k}")
        words.append(k)
    return words


def stream(*keys) -> np.random.Generator:
    """Return a Philox generator for the stream identified by ``keys``.

    String keys are hashed, so ``stream(seed, "dropout", step)`` is a valid key.
    """
    seq = np.random.SeedSequence(_as_words(keys))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(*keys) -> int:
    """Derive a 63-bit integer seed from ``keys`` (a stable hash of the tuple)."""
    state = np.random.SeedSequence(_as_words(keys)).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)
