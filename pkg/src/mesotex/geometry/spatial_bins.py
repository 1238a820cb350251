"""Uniform spatial bins over mesh vertices and exact K-nearest-neighbour queries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .._validation import MesotexWarning, check_points, check_positive
from . import _kernels
from .mesh import TriangleMesh


class KnnResult(NamedTuple):
    ids: np.ndarray
    distances: np.ndarray
    truncated: bool


@dataclass(frozen=True)
class SpatialBinIndex:
    """Vertices bucketed by ``floor(v / cell_size)``, stored as a dense CSR grid over the occupied box."""

    cell_size: float
    lo: np.ndarray          # integer cell coordinates of the grid origin
    dims: np.ndarray        # grid extent in cells
    cell_start: np.ndarray  # CSR offsets, length prod(dims) + 1
    items: np.ndarray       # vertex ids ordered by cell
    n_vertices: int
    vertices: np.ndarray

    @property
    def bins(self) -> dict[tuple[int, int, int], list[int]]:
        out = {}
        nz = np.nonzero(np.diff(self.cell_start))[0]
        for cell in nz:
            ix, rem = divmod(int(cell), int(self.dims[1] * self.dims[2]))
            iy, iz = divmod(rem, int(self.dims[2]))
            key = (ix + int(self.lo[0]), iy + int(self.lo[1]), iz + int(self.lo[2]))
            out[key] = self.items[self.cell_start[cell]:self.cell_start[cell + 1]].tolist()
        return out

    def cell_of(self, x) -> np.ndarray:
        return np.floor(np.asarray(x, dtype=np.float64) / self.cell_size).astype(np.int64)

    def query(self, x, K: int) -> KnnResult:
        """Batch query; ``ids`` and ``distances`` have shape (n, min(K, n_vertices))."""
        x = check_points(x, name="x")
        if K < 1:
            raise ValueError("K must be >= 1")
        Ke = min(int(K), self.n_vertices)
        ids, d2, _ = _kernels.knn_batch(x, self.vertices, self.cell_size, self.lo, self.dims,
                                        self.cell_start, self.items, Ke)
        truncated = Ke < K
        if truncated:
            warnings.warn(f"K={K} exceeds vertex count {self.n_vertices}; result truncated", MesotexWarning)
        return KnnResult(ids, np.sqrt(d2), truncated)


def default_cell_size(mesh: TriangleMesh) -> float:
    return 2.0 * mesh.mean_edge_length


def build_spatial_bins(mesh: TriangleMesh, cell_size: Optional[float] = None) -> SpatialBinIndex:
    if cell_size is None:
        cell_size = default_cell_size(mesh)
        if cell_size <= 0:
            cell_size = max(mesh.diagonal, 1.0)
    cell_size = check_positive(cell_size, "cell_size")
    V = np.ascontiguousarray(mesh.vertices, dtype=np.float64)
    cells = np.floor(V / cell_size).astype(np.int64)
    lo = cells.min(axis=0)
    dims = cells.max(axis=0) - lo + 1
    rel = cells - lo
    flat = (rel[:, 0] * dims[1] + rel[:, 1]) * dims[2] + rel[:, 2]
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=int(np.prod(dims)))
    start = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    return SpatialBinIndex(float(cell_size), lo, dims, start, order.astype(np.int64), len(V), V)


def knn_query(index: SpatialBinIndex, mesh: TriangleMesh, x, K: int) -> KnnResult:
    """K nearest mesh vertices to a single point, ascending by distance, ties to the lower id."""
    res = index.query(np.asarray(x, dtype=np.float64).reshape(1, 3), K)
    return KnnResult(res.ids[0], res.distances[0], res.truncated)


def knn_bruteforce(vertices: np.ndarray, x: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive-scan oracle with the same (distance, id) ordering."""
    x = check_points(x)
    K = min(K, len(vertices))
    ids = np.empty((len(x), K), dtype=np.int64)
    dist = np.empty((len(x), K))
    ar = np.arange(len(vertices))
    for i, p in enumerate(x):
        d = p - vertices
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        o = np.lexsort((ar, d2))[:K]
        ids[i] = o
        dist[i] = np.sqrt(d2[o])
    return ids, dist
