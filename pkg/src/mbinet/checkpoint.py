"""Checkpoint container.

Layout (all integers little-endian)::

    b"MBCK" | u32 version | u32 header_len | header (UTF-8 JSON, sorted keys)
    then, for every array listed in header["arrays"], in order:
    b"ARR8" | u32 ndim | u32 dim * ndim | float64 data, row-major

The header carries the model config, the array manifest (name, group,
shape) and free-form metadata such as provider and training state. Arrays
are stored as float64 so optimizer state round-trips exactly.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from mbinet.errors import CheckpointMismatch
from mbinet.model import ModelConfig

MAGIC = b"MBCK"
ARRAY_MAGIC = b"ARR8"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: OrderedDict  # name -> np.ndarray
    state: OrderedDict = field(default_factory=OrderedDict)  # optimizer arrays
    meta: dict = field(default_factory=dict)

    def torch_params(self) -> OrderedDict:
        return OrderedDict((k, torch.from_numpy(v.copy())) for k, v in self.params.items())


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype="<f8", order="C")


def encode(ckpt: Checkpoint) -> bytes:
    arrays = [("params", k, _as_array(v)) for k, v in ckpt.params.items()]
    arrays += [("state", k, _as_array(v)) for k, v in ckpt.state.items()]
    header = {
        "model": ckpt.config.to_dict(),
        "arrays": [{"group": g, "name": n, "shape": list(a.shape)} for g, n, a in arrays],
        "meta": ckpt.meta,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
    for _, _, a in arrays:
        parts.append(ARRAY_MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def decode(data: bytes, source: str = "<bytes>") -> Checkpoint:
    try:
        return _decode(data, source)
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, CheckpointMismatch):
            raise
        raise CheckpointMismatch(f"{source}: corrupt checkpoint ({exc})") from None


def _decode(data: bytes, source: str) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointMismatch(f"{source}: not a checkpoint file")
    version, head_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointMismatch(f"{source}: unsupported checkpoint version {version}")
    pos = 12 + head_len
    header = json.loads(data[12:pos])
    groups = {"params": OrderedDict(), "state": OrderedDict()}
    for entry in header["arrays"]:
        if data[pos:pos + 4] != ARRAY_MAGIC:
            raise CheckpointMismatch(f"{source}: corrupt array block for {entry['name']}")
        (ndim,) = struct.unpack_from("<I", data, pos + 4)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 8)
        if list(shape) != entry["shape"]:
            raise CheckpointMismatch(f"{source}: shape of {entry['name']} disagrees with header")
        pos += 8 + 4 * ndim
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
        groups[entry["group"]][entry["name"]] = arr
    if pos != len(data):
        raise CheckpointMismatch(f"{source}: {len(data) - pos} trailing bytes")
    return Checkpoint(ModelConfig.from_dict(header["model"]), groups["params"], groups["state"], header["meta"])


def save(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.write_bytes(encode(ckpt))
    return path


def load(path: str | Path, expect: ModelConfig | None = None) -> Checkpoint:
    ckpt = decode(Path(path).read_bytes(), str(path))
    if expect is not None and ckpt.config != expect:
        raise CheckpointMismatch(f"{path}: checkpoint config {ckpt.config} != expected {expect}")
    return ckpt


def checksums(params: Mapping[str, np.ndarray]) -> dict[str, str]:
    """Short content hash per array, for ``inspect`` and determinism checks."""
    return {k: hashlib.sha256(_as_array(v).tobytes()).hexdigest()[:16] for k, v in params.items()}
