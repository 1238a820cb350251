"""Binary tensor checkpoints (magic NRTXCKPT) with a JSON sidecar for configuration."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NRTXCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_tensors(path, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_tensors(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    out = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + klen].decode("utf-8")
            off += klen
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            n = int(np.prod(shape)) if rank else 1
            if off + 4 * n > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            out[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).copy()
            off += 4 * n
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    write_tensors(path, tensors)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_checkpoint(path):
    tensors = read_tensors(path)
    sc = sidecar_path(path)
    meta = json.loads(sc.read_text()) if sc.exists() else {}
    return tensors, meta


def save_field(path, field, extra_tensors: dict | None = None, meta: dict | None = None) -> None:
    tensors = dict(field.parameters())
    tensors.update(extra_tensors or {})
    m = {"field": field.config_dict()}
    m.update(meta or {})
    save_checkpoint(path, tensors, m)


def load_field(path, dtype=np.float64):
    """Returns (field, remaining tensors not owned by the field, meta)."""
    from .model import LatentField

    tensors, meta = load_checkpoint(path)
    if "field" not in meta:
        raise CheckpointError(f"{path}: sidecar with field configuration missing")
    field = LatentField.from_config_dict(meta["field"], dtype=dtype)
    params = field.parameters()
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: tensor {name} missing")
        if tensors[name].shape != p.shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {p.shape}")
        p[...] = tensors.pop(name)
    return field, tensors, meta
