"""Blue-noise patch centers on a triangle mesh by weighted sample elimination."""

from __future__ import annotations

import heapq
import warnings
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .._validation import MesotexWarning
from ..geometry.mesh import TriangleMesh

OVERSAMPLE = 5
ALPHA = 8.0


class PoissonSamples(NamedTuple):
    points: np.ndarray   # (n, 3)
    face_id: np.ndarray  # (n,)
    frames: np.ndarray   # (n, 3, 3) columns (t, b, n) of the host face
    radius: float        # ideal half-spacing r_max for the requested count
    truncated: bool


def packing_radius(area: float, count: int) -> float:
    """Half the spacing of a hexagonal packing of ``count`` points over ``area``."""
    return float(np.sqrt(area / (2.0 * np.sqrt(3.0) * count)))


def count_for_radius(area: float, radius: float) -> int:
    return max(1, int(np.floor(area / (2.0 * np.sqrt(3.0) * radius ** 2))))


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator):
    """Area-uniform random surface points; returns (points, face_id)."""
    areas = mesh.face_areas
    face = rng.choice(mesh.n_faces, size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
    return mesh.point_on_face(face, bary), face


def eliminate(points: np.ndarray, target: int, r_max: float, alpha: float = ALPHA) -> np.ndarray:
    """Indices of ``target`` survivors; repeatedly drop the point with the largest neighbour weight."""
    n = len(points)
    if target >= n:
        return np.arange(n)
    d2 = 2.0 * r_max
    tree = cKDTree(points)
    pairs = tree.query_pairs(d2, output_type="ndarray")
    nbrs: list[list[int]] = [[] for _ in range(n)]
    wts: list[list[float]] = [[] for _ in range(n)]
    if len(pairs):
        dist = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
        w = (1.0 - dist / d2) ** alpha
        for (a, b), wi in zip(pairs.tolist(), w.tolist()):
            nbrs[a].append(b)
            wts[a].append(wi)
            nbrs[b].append(a)
            wts[b].append(wi)
    weight = np.array([sum(w) for w in wts])
    alive = np.ones(n, dtype=bool)
    # max-heap with lazy invalidation; index breaks ties deterministically
    heap = [(-weight[i], i) for i in range(n)]
    heapq.heapify(heap)
    remaining = n
    while remaining > target:
        negw, i = heapq.heappop(heap)
        if not alive[i] or -negw != weight[i]:
            continue
        alive[i] = False
        remaining -= 1
        for j, wj in zip(nbrs[i], wts[i]):
            if alive[j]:
                weight[j] -= wj
                heapq.heappush(heap, (-weight[j], j))
    return np.flatnonzero(alive)


def poisson_disk_sample(mesh: TriangleMesh, target_count: Optional[int] = None, rng=None,
                        radius: Optional[float] = None, min_radius: Optional[float] = None,
                        oversample: int = OVERSAMPLE) -> PoissonSamples:
    """About ``target_count`` evenly spread surface points (or the count implied by ``radius``).

    ``min_radius`` caps the density; asking for more points than it allows returns fewer and warns.
    """
    if mesh.n_faces == 0:
        raise ValueError("mesh is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    area = mesh.area
    if radius is not None:
        lo, hi = mesh.bounds
        target_count = 1 if 2.0 * radius >= np.linalg.norm(hi - lo) else count_for_radius(area, radius)
    if target_count is None or target_count < 1:
        raise ValueError("target_count must be >= 1")
    truncated = False
    if min_radius is not None and packing_radius(area, target_count) < min_radius:
        allowed = count_for_radius(area, min_radius)
        warnings.warn(f"{target_count} samples exceed the density allowed by min_radius; using {allowed}",
                      MesotexWarning)
        target_count, truncated = allowed, True
    r_max = packing_radius(area, target_count)
    pts, face = sample_surface(mesh, oversample * target_count, rng)
    keep = eliminate(pts, target_count, r_max)
    return PoissonSamples(pts[keep], face[keep], mesh.face_frames[face[keep]].copy(), r_max, truncated)


def min_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return np.inf
    d, _ = cKDTree(points).query(points, k=2)
    return float(d[:, 1].min())
