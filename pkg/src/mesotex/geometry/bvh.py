"""Axis-aligned bounding volume hierarchy over mesh triangles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .._validation import check_points
from . import _kernels
from .mesh import TriangleMesh

LEAF_SIZE = 4
MAX_DEPTH = 64


@dataclass(frozen=True)
class Bvh:
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray   # -1 marks a leaf
    node_right: np.ndarray
    node_start: np.ndarray  # leaf range into tri_order
    node_count: np.ndarray
    tri_order: np.ndarray
    depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_lo)

    def kernel_args(self):
        return (self.node_lo, self.node_hi, self.node_left, self.node_right,
                self.node_start, self.node_count, self.tri_order)


class Hit(NamedTuple):
    face_id: int
    t: float
    barycentric: np.ndarray


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Top-down median split on the longest centroid axis."""
    tri = mesh.vertices[mesh.faces]
    tmin = tri.min(axis=1)
    tmax = tri.max(axis=1)
    cent = tri.mean(axis=1)
    order = np.arange(mesh.n_faces, dtype=np.int64)

    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        ids = order[s:e]
        lo.append(tmin[ids].min(axis=0))
        hi.append(tmax[ids].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(lo) - 1

    root = new_node(0, len(order))
    stack = [(root, 0, len(order), 0)]
    depth = 0
    while stack:
        nd, s, e, d = stack.pop()
        depth = max(depth, d)
        if e - s <= leaf_size:
            continue
        ids = order[s:e]
        c = cent[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort keeps construction deterministic for equal centroids
        srt = np.argsort(c[:, axis], kind="stable")
        order[s:e] = ids[srt]
        m = s + (e - s) // 2
        l_nd = new_node(s, m)
        r_nd = new_node(m, e)
        left[nd], right[nd] = l_nd, r_nd
        count[nd] = 0
        stack.append((r_nd, m, e, d + 1))
        stack.append((l_nd, s, m, d + 1))
    if depth > MAX_DEPTH:
        raise RuntimeError(f"BVH depth {depth} exceeds {MAX_DEPTH}")
    as_i = lambda a: np.asarray(a, dtype=np.int64)
    return Bvh(np.asarray(lo), np.asarray(hi), as_i(left), as_i(right), as_i(start), as_i(count),
               order, depth)


def raycast_batch(bvh: Bvh, mesh: TriangleMesh, origins, dirs, t_max=np.inf):
    """Nearest hits with t in (1e-7, t_max]; returns (face_id, t, barycentric), face_id -1 on a miss."""
    o = check_points(origins, "origins")
    d = check_points(dirs, "dirs")
    tm = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (len(o),)).copy()
    return _kernels.raycast_batch(o, d, tm, mesh.vertices, mesh.faces, *bvh.kernel_args())


def raycast(bvh: Bvh, mesh: TriangleMesh, origin, dir, t_max: float = np.inf) -> Optional[Hit]:
    f, t, b = raycast_batch(bvh, mesh, origin, dir, t_max)
    if f[0] < 0:
        return None
    return Hit(int(f[0]), float(t[0]), b[0])


def raycast_bruteforce(mesh: TriangleMesh, origin, dir, t_max: float = np.inf) -> Optional[Hit]:
    """Per-triangle Moller-Trumbore over every face; the oracle for BVH traversal."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dir, dtype=np.float64)
    V, F = mesh.vertices, mesh.faces
    v0, v1, v2 = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    e1 = v1 - v0
    e2 = v2 - v0
    px = d[1] * e2[:, 2] - d[2] * e2[:, 1]
    py = d[2] * e2[:, 0] - d[0] * e2[:, 2]
    pz = d[0] * e2[:, 1] - d[1] * e2[:, 0]
    det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tv = o - v0
        u = (tv[:, 0] * px + tv[:, 1] * py + tv[:, 2] * pz) * inv
        qx = tv[:, 1] * e1[:, 2] - tv[:, 2] * e1[:, 1]
        qy = tv[:, 2] * e1[:, 0] - tv[:, 0] * e1[:, 2]
        qz = tv[:, 0] * e1[:, 1] - tv[:, 1] * e1[:, 0]
        v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
        t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz) * inv
    eps = _kernels.BARY_EPS
    ok = (det != 0) & (u >= -eps) & (u <= 1 + eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > _kernels.RAY_TMIN) & (t <= t_max)
    if not ok.any():
        return None
    t = np.where(ok, t, np.inf)
    f = int(np.argmin(t))
    return Hit(f, float(t[f]), np.array([1 - u[f] - v[f], u[f], v[f]]))


def shell_intervals(bvh: Bvh, mesh: TriangleMesh, origins, dirs, s_max: float):
    """Per-ray entry/exit parameters against the s_max-dilated triangle boxes; t_in = inf on a miss."""
    o = check_points(origins, "origins")
    d = check_points(dirs, "dirs")
    return _kernels.shell_interval_batch(o, d, float(s_max), mesh.vertices, mesh.faces, *bvh.kernel_args())


def leaf_triangle_counts(bvh: Bvh, n_faces: int) -> np.ndarray:
    """How many times each triangle is reachable from the root (1 everywhere for a valid tree)."""
    seen = np.zeros(n_faces, dtype=np.int64)
    stack = [0]
    while stack:
        nd = stack.pop()
        if bvh.node_left[nd] < 0:
            s, c = bvh.node_start[nd], bvh.node_count[nd]
            np.add.at(seen, bvh.tri_order[s:s + c], 1)
        else:
            stack += [int(bvh.node_left[nd]), int(bvh.node_right[nd])]
    return seen
