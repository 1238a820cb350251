"""Synthesized latent textures: feature plane, residual-frame plane, provenance, and the NRTX file format.

Texel (i, j) covers uv in [j/W, (j+1)/W) x [i/H, (i+1)/H); u runs along columns, v along rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NRTX"
VERSION = 1
UNFILLED = np.uint32(0xFFFFFFFF)


class TextureFormatError(ValueError):
    pass


@dataclass
class SynthesizedTexture:
    features: np.ndarray    # (H, W, C), first dim_f channels are f, the rest f_hat
    quat: np.ndarray        # (H, W, 4) residual rotation, scalar-last
    handedness: np.ndarray  # (H, W) int8, -1 where the residual is a mirror
    provenance: np.ndarray  # (H, W) uint32 source patch id, UNFILLED if empty
    dim_f: int

    def __post_init__(self):
        H, W, C = self.features.shape
        if self.quat.shape != (H, W, 4) or self.handedness.shape != (H, W) or self.provenance.shape != (H, W):
            raise ValueError("texture planes must share the H x W layout")
        if not 0 < self.dim_f <= C:
            raise ValueError("dim_f must be in (0, C]")

    @classmethod
    def empty(cls, H: int, W: int, C: int, dim_f: int) -> "SynthesizedTexture":
        q = np.zeros((H, W, 4))
        q[..., 3] = 1.0
        return cls(np.zeros((H, W, C)), q, np.ones((H, W), np.int8), np.full((H, W), UNFILLED, np.uint32), dim_f)

    @property
    def shape(self):
        return self.features.shape

    @property
    def filled(self) -> np.ndarray:
        return self.provenance != UNFILLED

    def copy(self) -> "SynthesizedTexture":
        return SynthesizedTexture(self.features.copy(), self.quat.copy(), self.handedness.copy(),
                                  self.provenance.copy(), self.dim_f)

    def validate(self) -> None:
        m = self.filled
        if not np.all(np.isfinite(self.features[m])):
            raise ValueError("filled texels must have finite features")
        if np.any(np.abs(np.linalg.norm(self.quat[m], axis=-1) - 1) > 1e-5):
            raise ValueError("filled texels must carry unit quaternions")


def uv_to_texel(uv, H: int, W: int):
    """Continuous texel coordinates (row, col) whose integer values are texel centers."""
    uv = np.asarray(uv, dtype=np.float64)
    return uv[..., 1] * H - 0.5, uv[..., 0] * W - 0.5


def texel_centers_uv(H: int, W: int) -> np.ndarray:
    jj, ii = np.meshgrid((np.arange(W) + 0.5) / W, (np.arange(H) + 0.5) / H)
    return np.stack([jj, ii], axis=-1)


def sample_bilinear(plane, mask, uv):
    """Bilinear lookup using only ``mask``ed texels (weights renormalized); returns (values, valid)."""
    H, W = plane.shape[:2]
    r, c = uv_to_texel(uv, H, W)
    r = np.clip(r, 0, H - 1)
    c = np.clip(c, 0, W - 1)
    r0 = np.minimum(np.floor(r).astype(np.int64), H - 1)
    c0 = np.minimum(np.floor(c).astype(np.int64), W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    fr, fc = r - r0, c - c0
    acc = np.zeros(r.shape + plane.shape[2:])
    wsum = np.zeros(r.shape)
    for rr, cc, w in ((r0, c0, (1 - fr) * (1 - fc)), (r0, c1, (1 - fr) * fc),
                      (r1, c0, fr * (1 - fc)), (r1, c1, fr * fc)):
        w = w * mask[rr, cc]
        acc += w[..., None] * plane[rr, cc]
        wsum += w
    valid = wsum > 1e-12
    acc[valid] /= wsum[valid][:, None]
    return acc, valid


def sample_nearest(plane, uv):
    H, W = plane.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    r = np.clip(np.floor(uv[..., 1] * H).astype(np.int64), 0, H - 1)
    c = np.clip(np.floor(uv[..., 0] * W).astype(np.int64), 0, W - 1)
    return plane[r, c], (r, c)


def write_texture(path, tex: SynthesizedTexture) -> None:
    H, W, C = tex.features.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIII", VERSION, H, W, C, tex.dim_f))
        fh.write(np.ascontiguousarray(tex.features, "<f4").tobytes())
        fh.write(np.ascontiguousarray(tex.quat, "<f4").tobytes())
        fh.write(np.ascontiguousarray(tex.provenance, "<u4").tobytes())
        fh.write(np.ascontiguousarray(tex.handedness, "i1").tobytes())


def read_texture(path) -> SynthesizedTexture:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise TextureFormatError(f"{path}: bad magic")
    try:
        version, H, W, C, dim_f = struct.unpack_from("<IIIII", data, 4)
    except struct.error as exc:
        raise TextureFormatError(f"{path}: truncated header") from exc
    if version != VERSION:
        raise TextureFormatError(f"{path}: unsupported version {version}")
    off = 24
    sizes = [(H * W * C, "<f4"), (H * W * 4, "<f4"), (H * W, "<u4"), (H * W, "i1")]
    planes = []
    for n, dt in sizes:
        nbytes = n * np.dtype(dt).itemsize
        if off + nbytes > len(data):
            raise TextureFormatError(f"{path}: truncated data")
        planes.append(np.frombuffer(data, dtype=dt, count=n, offset=off).copy())
        off += nbytes
    feats, quat, prov, hand = planes
    return SynthesizedTexture(feats.reshape(H, W, C).astype(np.float64), quat.reshape(H, W, 4).astype(np.float64),
                              hand.reshape(H, W).astype(np.int8), prov.reshape(H, W), int(dim_f))
