"""Single-file checkpoint: JSON manifest followed by a float32 payload.

Byte layout::

    offset 0   8 bytes   magic b"HITCKPT\\x01"
    offset 8   8 bytes   manifest length N, unsigned little-endian
    offset 16  N bytes   UTF-8 JSON manifest
    offset 16+N          payload: little-endian float32 values

The manifest is ``{"dtype": "<f4", "tensors": [{"name", "shape", "offset"}, ...]}``
with tensors sorted by name and ``offset`` counted in float32 elements from
the start of the payload. Serialization is deterministic, so equal parameters
give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError, DimensionError
from .tensor import Tensor

MAGIC = b"HITCKPT\x01"


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(params):
        value = params[name]
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = json.dumps({"dtype": "<f4", "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16 : 16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt manifest: {exc}") from None
    payload = np.frombuffer(raw, dtype="<f4", offset=16 + n)
    out = {}
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > payload.size:
            raise DataError(f"{path}: tensor {entry['name']!r} runs past the end of the payload")
        out[entry["name"]] = payload[start : start + size].reshape(entry["shape"]).copy()
    return out


def load_into(params: Mapping[str, Tensor], path) -> None:
    """Copy checkpoint values into existing parameters, checking names and shapes."""
    stored = load_checkpoint(path)
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise DataError(f"{path}: parameter names differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in params.items():
        if stored[name].shape != p.shape:
            raise DimensionError(f"{path}: {name} has shape {stored[name].shape}, model expects {p.shape}")
        p.data[...] = stored[name]
