"""8-bit PNG and float32 raw ("NRTXIMG") image files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

RAW_MAGIC = b"NRTXIMG\x00"


class ImageFormatError(ValueError):
    pass


def write_png(path, rgb) -> None:
    """Values are display-referred in [0, 1] and written without further encoding."""
    a = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(a * 255.0).astype(np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_raw(path, rgb) -> None:
    a = np.asarray(rgb, dtype="<f4")
    if a.ndim != 3:
        raise ValueError("raw images are (H, W, C)")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != RAW_MAGIC:
        raise ImageFormatError(f"{path}: not a raw image")
    H, W, C = struct.unpack_from("<III", data, 8)
    n = H * W * C
    if 20 + 4 * n > len(data):
        raise ImageFormatError(f"{path}: truncated raw image")
    return np.frombuffer(data, dtype="<f4", count=n, offset=20).reshape(H, W, C).astype(np.float64)


def read_image(path) -> np.ndarray:
    p = Path(path)
    if p.suffix.lower() == ".png":
        return read_png(p)
    return read_raw(p)


def write_image(path, rgb) -> None:
    p = Path(path)
    if p.suffix.lower() == ".png":
        write_png(p, rgb)
    else:
        write_raw(p, rgb)
