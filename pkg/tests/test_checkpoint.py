import struct

import numpy as np
import pytest

from yieldcast.calendars import CropKind
from yieldcast.checkpoint import (
    MAGIC, Checkpoint, checkpoint_bytes, load_checkpoint, read_header, save_checkpoint,
)
from yieldcast.errors import SchemaError
from yieldcast.features import GddConfig
from yieldcast.nn import init_params, predict


@pytest.fixture
def ckpt(small_split, tiny_arch):
    return Checkpoint(init_params(tiny_arch, 4), small_split.scaler, CropKind.CORN, 4,
                      GddConfig(cap=35.0), "planting-next", {"run": 0})


def test_round_trip(tmp_path, ckpt, small_split):
    path = save_checkpoint(tmp_path / "m.ckpt", ckpt)
    again = load_checkpoint(path)
    assert again.net.arch == ckpt.net.arch
    assert all(np.array_equal(again.net.params[k], v) for k, v in ckpt.net.params.items())
    assert again.scaler.to_dict() == ckpt.scaler.to_dict()
    assert (again.crop, again.seed, again.window_anchor, again.meta) == (
        CropKind.CORN, 4, "planting-next", {"run": 0})
    assert again.gdd == ckpt.gdd
    d, s, _ = small_split.arrays("test")
    assert np.array_equal(predict(again.net, d, s), predict(ckpt.net, d, s))


def test_layout(ckpt):
    raw = checkpoint_bytes(ckpt)
    assert raw[:8] == MAGIC
    (length,) = struct.unpack("<Q", raw[8:16])
    n_values = sum(v.size for v in ckpt.net.params.values())
    assert len(raw) == 16 + length + 8 * n_values


def test_bytes_are_deterministic(ckpt):
    assert checkpoint_bytes(ckpt) == checkpoint_bytes(ckpt)


def test_header_is_self_describing(tmp_path, ckpt):
    header = read_header(save_checkpoint(tmp_path / "m.ckpt", ckpt))
    assert header["crop"] == "corn" and header["format"] == "yieldcast-checkpoint"
    assert [t["name"] for t in header["tensors"]] == list(ckpt.net.params)
    junk = tmp_path / "junk"
    junk.write_bytes(b"junk")
    assert read_header(junk) is None


def test_rejects_corruption(tmp_path, ckpt):
    raw = bytearray(checkpoint_bytes(ckpt))
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(SchemaError):
        load_checkpoint(bad)
    bad.write_bytes(bytes(raw).replace(b'"version": 1', b'"version": 9'))
    with pytest.raises(SchemaError):
        load_checkpoint(bad)
    bad.write_bytes(bytes(raw).replace(b'"lstm_sizes": [6, 5]', b'"lstm_sizes": [6, 6]'))
    with pytest.raises(SchemaError):
        load_checkpoint(bad)
