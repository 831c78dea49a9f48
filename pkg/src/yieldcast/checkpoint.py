"""Self-describing model checkpoint files.

Layout (all integers little-endian)::

    bytes 0..7    magic b"YCKPT001"
    bytes 8..15   uint64 header length L
    next L bytes  UTF-8 JSON header, keys sorted
    remainder     tensor data, float64 little-endian, C order

The header holds the architecture, crop, seed, scaler statistics, GDD
config, window anchor and a tensor table of ``name``, ``shape``,
``offset`` (relative to the start of tensor data) and ``nbytes``.
Writing is deterministic: the same network and metadata always produce
identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .calendars import CropKind
from .errors import SchemaError
from .features import GddConfig, Scaler
from .nn import Network, NetworkArch

MAGIC = b"YCKPT001"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    net: Network
    scaler: Scaler
    crop: CropKind
    seed: int
    gdd: GddConfig = field(default_factory=GddConfig)
    window_anchor: str = "planting-start"
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    tensors, blobs, offset = [], [], 0
    for name, arr in ckpt.net.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": "yieldcast-checkpoint",
        "version": FORMAT_VERSION,
        "arch": ckpt.net.arch.to_dict(),
        "crop": CropKind.parse(ckpt.crop).value,
        "seed": int(ckpt.seed),
        "scaler": ckpt.scaler.to_dict(),
        "gdd": ckpt.gdd.to_dict(),
        "window_anchor": ckpt.window_anchor,
        "meta": ckpt.meta,
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise SchemaError(f"{path}: not a yieldcast checkpoint")
    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + length].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {header.get('version')}")
    data = raw[16 + length:]
    params = {}
    for t in header["tensors"]:
        chunk = data[t["offset"]:t["offset"] + t["nbytes"]]
        params[t["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(t["shape"]).astype(float)
    arch = NetworkArch.from_dict(header["arch"])
    expected = arch.param_shapes()
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise SchemaError(f"{path}: tensor table does not match the architecture")
    return Checkpoint(
        net=Network(arch, params),
        scaler=Scaler.from_dict(header["scaler"]),
        crop=CropKind.parse(header["crop"]),
        seed=header["seed"],
        gdd=GddConfig.from_dict(header["gdd"]),
        window_anchor=header["window_anchor"],
        meta=header.get("meta", {}),
    )


def read_header(path) -> Optional[dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        return None
    (length,) = struct.unpack("<Q", raw[8:16])
    return json.loads(raw[16:16 + length].decode("utf-8"))
