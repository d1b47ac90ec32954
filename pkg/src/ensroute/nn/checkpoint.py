"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"ENSRCKPT"
    4 bytes   uint32 format version (currently 1)
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header, keys sorted, no whitespace
    ...       raw array bytes, concatenated in header order

The header holds ``precision``, ``config``, ``meta``, ``rng_state`` and an
``arrays`` list of ``{name, dtype, shape, offset, nbytes}`` where ``offset``
counts from the first byte after the header. Writing the same content twice
yields identical bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

MAGIC = b"ENSRCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    precision: str = "float32"
    config: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    rng_state: Optional[Dict[str, Any]] = None

    def namespace(self, prefix: str) -> Dict[str, np.ndarray]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "arrays": entries,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "precision": ckpt.precision,
        "rng_state": ckpt.rng_state,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(hb)) + hb + b"".join(chunks)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", buf[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(buf[20:20 + hlen].decode())
    base = 20 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = buf[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"truncated array {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return Checkpoint(arrays=arrays, precision=header["precision"], config=header["config"],
                      meta=header["meta"], rng_state=header["rng_state"])


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
