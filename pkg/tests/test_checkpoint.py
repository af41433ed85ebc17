import struct

import numpy as np
import pytest

from pfnlab.errors import CheckpointError
from pfnlab.model import init_params, load_checkpoint, save_checkpoint
from pfnlab.model.checkpoint import MAGIC, from_bytes, to_bytes
from pfnlab.trainer import inject_lora

from conftest import TINY


def _assert_same(a, b):
    assert a.names() == b.names()
    for n in a.names():
        assert a[n].tobytes() == b[n].tobytes()
        assert a[n].shape == b[n].shape
        assert a.entries[n].trainable == b.entries[n].trainable
    assert a.meta == b.meta


def test_roundtrip_bit_exact(tmp_path, tiny_params):
    tiny_params.meta["pretrain_step"] = 12
    path = save_checkpoint(tiny_params, tmp_path / "m.pfnckpt")
    _assert_same(tiny_params, load_checkpoint(path))


def test_roundtrip_with_adapters_and_flags(tmp_path, tiny_params):
    p = inject_lora(tiny_params, rank=2)
    p.entries["lora.layer0.attn.Wq.B"].tensor[...] = np.random.default_rng(0).normal(size=(TINY.d_model, 2))
    again = from_bytes(to_bytes(p))
    _assert_same(p, again)
    assert again.lora == {"rank": 2, "alpha": 2.0}


def test_bytes_are_stable(tiny_params):
    assert to_bytes(tiny_params) == to_bytes(init_params(TINY, 0))


def test_header_layout(tiny_params):
    blob = to_bytes(tiny_params)
    assert blob[:8] == MAGIC
    (count,) = struct.unpack_from("<I", blob, 8)
    assert count == len(tiny_params)
    (n,) = struct.unpack_from("<I", blob, 12)
    name = blob[16 : 16 + n].decode()
    assert name == tiny_params.names()[0]
    tag, trainable, rank = struct.unpack_from("<BBI", blob, 16 + n)
    assert (tag, trainable, rank) == (0, 1, tiny_params[name].ndim)


def test_corrupt_inputs(tmp_path, tiny_params):
    blob = to_bytes(tiny_params)
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        from_bytes(blob[:-5])
    with pytest.raises(CheckpointError):
        from_bytes(blob + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pfnckpt")
