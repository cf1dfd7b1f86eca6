"""Binary checkpoint format with an exact round trip.

Layout: magic ``CVCK``, format version (u32), a JSON metadata blob, parameter
count, then per parameter: name, shape, and raw little-endian float64 values.
All integers are little-endian u32; byte strings are length prefixed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .numcore import ParamSet

MAGIC = b"CVCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _write_bytes(fh, data: bytes):
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def _read_bytes(fh) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n)


def save_checkpoint(path, params: ParamSet | dict[str, np.ndarray], metadata: dict):
    items = params.items() if isinstance(params, ParamSet) else params.items()
    entries = [(name, t.value if hasattr(t, "value") else np.asarray(t, dtype=np.float64))
               for name, t in items]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_bytes(fh, json.dumps(metadata, sort_keys=True).encode("utf-8"))
        fh.write(struct.pack("<I", len(entries)))
        for name, value in entries:
            _write_bytes(fh, name.encode("utf-8"))
            fh.write(struct.pack("<I", value.ndim))
            for dim in value.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (metadata, name -> float64 array)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        metadata = json.loads(_read_bytes(fh).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        values: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = _read_bytes(fh).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 8 * n)
            values[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return metadata, values
