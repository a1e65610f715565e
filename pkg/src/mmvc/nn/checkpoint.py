"""``MMNN`` parameter checkpoints.

Layout (little-endian): magic ``MMNN``, then for each tensor
``u32 name_len, name (utf-8), u32 rank, rank * u32 dims, float32 data``
until end of file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..data import DataError

MAGIC = b"MMNN"


def save_checkpoint(path, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read all tensors as float64 arrays, in file order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    out = {}
    pos = 4
    try:
        while pos < len(raw):
            (nlen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            end = pos + 4 * count
            if end > len(raw):
                raise DataError(f"{path}: tensor {name!r} truncated")
            out[name] = np.frombuffer(raw[pos:end], dtype="<f4").reshape(dims).astype(np.float64)
            pos = end
    except (struct.error, UnicodeDecodeError):
        raise DataError(f"{path}: corrupt checkpoint") from None
    return out
