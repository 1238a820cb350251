"""Multi-resolution hash-grid feature tables with trilinear lookup and explicit backward."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .._validation import MesotexWarning, check_points
from . import _kernels

PRIMES = (np.uint64(1), np.uint64(2654435761), np.uint64(805459861))

# the eight cell corners as (dx, dy, dz) bits
_CORNERS = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 8
    base_resolution: int = 16
    per_level_scale: float = 1.5
    table_size: int = 2 ** 15
    features_per_level: int = 2

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        T = self.table_size
        if T < 1 or T & (T - 1):
            raise ValueError("table_size must be a power of two")
        if self.features_per_level not in (1, 2, 4):
            raise ValueError("features_per_level must be 1, 2 or 4")
        if self.base_resolution < 1 or self.per_level_scale < 1:
            raise ValueError("base_resolution >= 1 and per_level_scale >= 1 required")

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    @property
    def resolutions(self) -> np.ndarray:
        return np.floor(self.base_resolution * self.per_level_scale ** np.arange(self.levels)).astype(np.int64)

    def to_dict(self) -> dict:
        return asdict(self)


class EncodeCache(NamedTuple):
    index: np.ndarray    # (L, N, 8) flat rows into the (L*T, F) table
    weight: np.ndarray   # (L, N, 8)
    frac: np.ndarray     # (L, N, 3)
    clamped: np.ndarray  # (N,) bool


def hash_corners(ijk: np.ndarray, table_size: int) -> np.ndarray:
    """XOR of coordinate-wise prime products, modulo the (power-of-two) table size."""
    u = ijk.astype(np.uint64)
    h = (u[..., 0] * PRIMES[0]) ^ (u[..., 1] * PRIMES[1]) ^ (u[..., 2] * PRIMES[2])
    return (h & np.uint64(table_size - 1)).astype(np.int64)


class HashGrid:
    def __init__(self, config: HashGridConfig = HashGridConfig(), rng: Optional[np.random.Generator] = None,
                 dtype=np.float64, init_scale: float = 1e-4):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        L, T, F = config.levels, config.table_size, config.features_per_level
        self.tables = rng.uniform(-init_scale, init_scale, size=(L, T, F)).astype(self.dtype)
        self.grad = np.zeros_like(self.tables)

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def encode(self, p, need_cache: bool = True):
        """Features (N, L*F) at points of the unit cube; out-of-cube points are clamped and flagged."""
        p = check_points(p, "p")
        clamped = np.any((p < 0.0) | (p > 1.0), axis=1)
        if clamped.any():
            warnings.warn(f"{int(clamped.sum())} points outside the unit cube were clamped", MesotexWarning)
            p = np.clip(p, 0.0, 1.0)
        cfg = self.config
        L, T, F = cfg.levels, cfg.table_size, cfg.features_per_level
        N = len(p)
        p = np.ascontiguousarray(p, dtype=np.float64)
        index = np.empty((L, N, 8), dtype=np.int64)
        weight = np.empty((L, N, 8), dtype=self.dtype)
        frac = np.empty((L, N, 3), dtype=self.dtype)
        feats = np.empty((N, L * F), dtype=self.dtype)
        _kernels.encode_kernel(p, cfg.resolutions.astype(np.float64), self.tables, index, weight, frac, feats)
        if not need_cache:
            return feats, None
        return feats, EncodeCache(index, weight, frac, clamped)

    def backward(self, cache: EncodeCache, grad_out: np.ndarray, need_grad_p: bool = False):
        """Accumulate dL/dtable into ``self.grad``; optionally return dL/dp (zero for clamped points)."""
        cfg = self.config
        L, T, F = cfg.levels, cfg.table_size, cfg.features_per_level
        g = np.ascontiguousarray(grad_out, dtype=self.dtype).reshape(-1, L * F)
        gflat = self.grad.reshape(L * T, F)
        _kernels.scatter_kernel(cache.index, cache.weight, g, gflat)
        if not need_grad_p:
            return None
        grad_p = np.zeros((g.shape[0], 3), dtype=self.dtype)
        _kernels.grad_p_kernel(cache.index, cache.frac, cfg.resolutions.astype(np.float64),
                               self.tables.reshape(L * T, F), g, grad_p)
        grad_p[cache.clamped] = 0.0
        return grad_p

    def zero_grad(self) -> None:
        self.grad[...] = 0.0
