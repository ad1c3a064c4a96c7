"""Binary checkpoint serialization.

Layout: the magic bytes ``SIRA1`` followed by one record per parameter, each
record holding the name length, the UTF-8 name bytes, the rank, the dims as
64-bit little-endian unsigned integers, and the values as 64-bit little-endian
floats in row-major order.  Records are written in sorted name order so a
round trip is byte-stable.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"SIRA1"


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(arrays):
            arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64))
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:5]!r}")
    pos = 5
    arrays: dict[str, np.ndarray] = {}
    while pos < len(raw):
        (name_len,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        dims = struct.unpack_from(f"<{rank}Q", raw, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).copy()
        pos += 8 * count
        arrays[name] = values.reshape(dims)
    return arrays


def save_params(path: str | Path, params: dict[str, Tensor],
                extra: dict[str, np.ndarray] | None = None) -> None:
    """Write model parameters (and optional extra arrays, e.g. optimizer state)."""
    arrays = {name: p.data for name, p in params.items()}
    if extra:
        arrays.update(extra)
    save_arrays(path, arrays)


def load_into(path: str | Path, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Load a checkpoint into existing parameter tensors; returns leftover arrays."""
    arrays = load_arrays(path)
    for name, p in params.items():
        if name not in arrays:
            raise KeyError(f"checkpoint {path} is missing parameter '{name}'")
        stored = arrays.pop(name)
        if stored.shape != p.data.shape:
            raise ValueError(f"parameter '{name}' shape {stored.shape} != expected {p.data.shape}")
        p.data = np.ascontiguousarray(stored)
    return arrays
