import struct

import numpy as np
import pytest

from vpre import checkpoint
from vpre.tensor import Tensor


def test_roundtrip(tmp_path, rng):
    path = str(tmp_path / "model.vpre")
    tensors = {
        "layer.weight": rng.normal(size=(3, 4)).astype(np.float32),
        "layer.bias": rng.normal(size=4).astype(np.float64),
        "scalarish": np.array([1.5], dtype=np.float32),
    }
    checkpoint.save(path, tensors)
    loaded = checkpoint.load(path)
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert loaded[k].dtype == tensors[k].dtype
        assert np.array_equal(loaded[k], tensors[k])


def test_accepts_tensor_objects(tmp_path):
    path = str(tmp_path / "m.vpre")
    checkpoint.save(path, {"w": Tensor(np.ones((2, 2)))})
    assert np.array_equal(checkpoint.load(path)["w"], np.ones((2, 2), dtype=np.float32))


def test_header_layout(tmp_path):
    path = str(tmp_path / "m.vpre")
    checkpoint.save(path, {"ab": np.zeros((2, 3), dtype=np.float32)})
    raw = open(path, "rb").read()
    assert raw[:4] == b"VPRE"
    version, count = struct.unpack_from("<II", raw, 4)
    assert (version, count) == (1, 1)
    (name_len,) = struct.unpack_from("<I", raw, 12)
    assert name_len == 2
    assert raw[16:18] == b"ab"
    tag, rank = struct.unpack_from("<BB", raw, 18)
    assert (tag, rank) == (0, 2)
    assert struct.unpack_from("<2Q", raw, 20) == (2, 3)
    assert len(raw) == 36 + 2 * 3 * 4


def test_deterministic_bytes(tmp_path, rng):
    tensors = {"b": rng.normal(size=3).astype(np.float32),
               "a": rng.normal(size=(2, 2)).astype(np.float32)}
    p1, p2 = str(tmp_path / "1.vpre"), str(tmp_path / "2.vpre")
    checkpoint.save(p1, tensors)
    checkpoint.save(p2, dict(reversed(list(tensors.items()))))
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.vpre"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(str(path))


def test_non_float_rejected(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.save(str(tmp_path / "x.vpre"), {"w": np.zeros(3, dtype=np.int64)})


def test_no_partial_file_on_failure(tmp_path):
    target = tmp_path / "out.vpre"
    try:
        checkpoint.save(str(target), {"w": np.zeros(3, dtype=np.int32)})
    except checkpoint.CheckpointError:
        pass
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []
