"""Versioned binary checkpoints shared by the CNN and LSTM estimators.

Layout (all little-endian)::

    magic    b"VDCKPT"
    version  uint16
    hlen     uint32          length of the JSON header
    header   utf-8 JSON      {"model": ..., "spec": ..., "seed": ..., "tensors": [[name, shape], ...]}
    payload  float32 values of every tensor, in header order, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VDCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: str, spec: dict, seed: int | None, tensors: dict[str, np.ndarray]) -> None:
    header = {
        "model": model,
        "spec": spec,
        "seed": seed,
        "tensors": [[name, list(np.shape(arr))] for name, arr in tensors.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for arr in tensors.values())
    Path(path).write_bytes(MAGIC + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + payload)


def load_checkpoint(path, expect_model: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<HI", data, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<HI")
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    if expect_model is not None and header["model"] != expect_model:
        raise CheckpointError(f"{path}: holds a {header['model']!r} model, expected {expect_model!r}")
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        end = pos + 4 * n
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload at tensor {name!r}")
        tensors[name] = np.frombuffer(data[pos:end], dtype="<f4").reshape(shape).copy()
        pos = end
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return header, tensors
