"""Named-tensor checkpoint files.

Layout (all integers little-endian):
    magic      4 bytes  b"VPRE"
    version    u32      currently 1
    count      u32      number of tensors
    per tensor, sorted by name:
        name_len u32, name utf-8 bytes
        dtype    u8   (0 = float32, 1 = float64)
        rank     u8
        dims     u64 x rank
        data     raw little-endian values, row-major

Writes are atomic: a temp file in the target directory is renamed over
the destination, so a crash never leaves a partial checkpoint behind.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .tensor import Tensor

MAGIC = b"VPRE"
VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save(path: str, tensors: dict[str, "np.ndarray | Tensor"]) -> None:
    arrays = {}
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        arrays[name] = arr

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(arrays)))
            for name in sorted(arrays):
                arr = arrays[name]
                nb = name.encode("utf-8")
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        tag, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        dtype = _TAG_DTYPES[tag]
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype=dtype, count=n, offset=off).reshape(dims)
        off += n * dtype.itemsize
        out[name] = arr.astype(dtype.newbyteorder("="))
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return out
