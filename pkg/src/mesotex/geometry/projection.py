"""Projection of query points onto the base shape and its differentiable layer.

A point ``x`` is described by its footpoint ``x_c`` on the base mesh and the
signed distance ``s`` along the coarse normal ``n_c``, so that
``x = x_c + s * n_c``.  The coarse normal blends the normals of the K nearest
vertices with the direction from the nearest vertex towards ``x``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .._validation import MesotexWarning, ProjectionFailure, check_points
from . import _kernels
from .bvh import Bvh, build_bvh
from .mesh import TriangleMesh
from .spatial_bins import SpatialBinIndex, build_spatial_bins

DEFAULT_K = 8
DEFAULT_W = 0.01


@dataclass(frozen=True)
class Projection:
    x_c: np.ndarray
    s: float
    n_c: np.ndarray
    face_id: int
    barycentric: np.ndarray


@dataclass(frozen=True)
class ProjectionBatch:
    """Column-wise projections; rows with ``ok == False`` failed and carry zeros."""

    x_c: np.ndarray
    s: np.ndarray
    n_c: np.ndarray
    face_id: np.ndarray
    barycentric: np.ndarray
    flags: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return (self.flags & _kernels.FLAG_MISS) == 0

    def __len__(self) -> int:
        return len(self.s)

    def __getitem__(self, i) -> Projection:
        if not self.ok[i]:
            raise ProjectionFailure(f"point {i} did not hit the base mesh")
        return Projection(self.x_c[i], float(self.s[i]), self.n_c[i], int(self.face_id[i]), self.barycentric[i])

    def subset(self, mask) -> "ProjectionBatch":
        return ProjectionBatch(self.x_c[mask], self.s[mask], self.n_c[mask], self.face_id[mask],
                               self.barycentric[mask], self.flags[mask])


class BaseProjector:
    """Bundles a mesh with its spatial bins and BVH; all queries are read-only."""

    def __init__(self, mesh: TriangleMesh, K: int = DEFAULT_K, w: float = DEFAULT_W,
                 index: Optional[SpatialBinIndex] = None, bvh: Optional[Bvh] = None):
        self.mesh = mesh
        self.K = int(K)
        self.w = float(w)
        self.index = index if index is not None else build_spatial_bins(mesh)
        self.bvh = bvh if bvh is not None else build_bvh(mesh)
        self.eps = 1e-9 * max(mesh.diagonal, 1e-300)

    def _index_args(self):
        ix = self.index
        return (ix.cell_size, ix.lo, ix.dims, ix.cell_start, ix.items)

    def coarse_normals(self, points) -> tuple[np.ndarray, np.ndarray]:
        x = check_points(points)
        K = min(self.K, self.mesh.n_vertices)
        return _kernels.coarse_normal_batch(x, self.mesh.vertices, self.mesh.vertex_normals,
                                            *self._index_args(), K, self.w, self.eps)

    def project(self, points, normals=None, t_max: float = np.inf) -> ProjectionBatch:
        """Project points; passing ``normals`` casts along those directions instead of n_c(x)."""
        x = check_points(points)
        use_given = normals is not None
        given = check_points(normals, "normals") if use_given else np.zeros((1, 3))
        K = min(self.K, self.mesh.n_vertices)
        m = self.mesh
        out = _kernels.project_batch(x, given, use_given, m.vertices, m.vertex_normals, m.faces,
                                     np.ascontiguousarray(m.face_normals), *self._index_args(), K,
                                     self.w, self.eps, *self.bvh.kernel_args(), float(t_max))
        return ProjectionBatch(*out)


def coarse_normal(mesh: TriangleMesh, index: SpatialBinIndex, x, K: int = DEFAULT_K,
                  w: float = DEFAULT_W) -> np.ndarray:
    x = check_points(x)
    Ke = min(K, mesh.n_vertices)
    eps = 1e-9 * max(mesh.diagonal, 1e-300)
    n, flags = _kernels.coarse_normal_batch(x, mesh.vertices, mesh.vertex_normals, index.cell_size,
                                            index.lo, index.dims, index.cell_start, index.items,
                                            Ke, float(w), eps)
    if flags[0] & _kernels.FLAG_ANTIPODAL:
        warnings.warn("coarse normal cancelled to zero; using nearest vertex normal", MesotexWarning)
    return n[0]


def coarse_normal_reference(vertices, vertex_normals, x, K: int = DEFAULT_K, w: float = DEFAULT_W) -> np.ndarray:
    """Scalar evaluation of the weighted interpolation using an exhaustive neighbour scan."""
    x = np.asarray(x, dtype=np.float64)
    d = np.linalg.norm(vertices - x, axis=1)
    order = np.lexsort((np.arange(len(d)), d))[:K]
    v1 = vertices[order[0]]
    d1 = d[order[0]]
    W = sum(1.0 / d[k] for k in order) + 1.0 / w
    acc = np.zeros(3)
    for k in order:
        acc += (vertex_normals[k] / d[k] + (x - v1) / (w * d1)) / W
    return acc / np.linalg.norm(acc)


def project_to_base(mesh: TriangleMesh, bvh: Bvh, index: SpatialBinIndex, x,
                    K: int = DEFAULT_K, w: float = DEFAULT_W) -> Projection:
    proj = BaseProjector(mesh, K, w, index, bvh).project(x)
    if not proj.ok[0]:
        raise ProjectionFailure("ray along +/- n_c missed the base mesh")
    return proj[0]


def projection_jacobian(p: Projection) -> tuple[np.ndarray, np.ndarray]:
    """Backward rule d x_c/dx = I - n n^T and d s/dx = n, applied as defined."""
    n = np.asarray(p.n_c, dtype=np.float64)
    return np.eye(3) - np.outer(n, n), n.copy()


def projection_backward(n_c: np.ndarray, grad_xc: np.ndarray, grad_s: np.ndarray) -> np.ndarray:
    """Chain dL/dx from dL/dx_c and dL/ds through the defined rule (the Jacobians are symmetric)."""
    ndot = np.sum(n_c * grad_xc, axis=1, keepdims=True)
    return grad_xc - ndot * n_c + grad_s[:, None] * n_c
