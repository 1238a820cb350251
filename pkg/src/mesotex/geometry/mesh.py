"""Indexed triangle meshes with fixed per-face tangent frames."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .._validation import check_array

Array = np.ndarray

_EPS = 1e-12


def _normalize(v: Array, axis: int = -1) -> Array:
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.maximum(n, _EPS)


def face_normals(vertices: Array, faces: Array, unit: bool = True) -> Array:
    """Geometric face normals; length is twice the face area when ``unit`` is False."""
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    n = np.cross(v1 - v0, v2 - v0)
    return _normalize(n) if unit else n


def area_weighted_vertex_normals(vertices: Array, faces: Array) -> Array:
    fn = face_normals(vertices, faces, unit=False)
    vn = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    bad = np.linalg.norm(vn, axis=1) < _EPS
    vn[bad] = (0.0, 0.0, 1.0)
    return _normalize(vn)


def _reference_tangents(normals: Array) -> Array:
    # world x projected onto the face plane; y where the face is nearly x-facing
    ref = np.zeros_like(normals)
    use_y = np.abs(normals[:, 0]) > 0.9
    ref[~use_y, 0] = 1.0
    ref[use_y, 1] = 1.0
    t = ref - np.sum(ref * normals, axis=1, keepdims=True) * normals
    return _normalize(t)


def _uv_tangents(vertices: Array, faces: Array, uv: Array) -> tuple[Array, Array]:
    """dP/du per face and a mask of faces whose UV triangle is non-degenerate."""
    p0, p1, p2 = (vertices[faces[:, k]] for k in range(3))
    e1, e2 = p1 - p0, p2 - p0
    d1 = uv[:, 1] - uv[:, 0]
    d2 = uv[:, 2] - uv[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    ok = np.abs(det) > 1e-14
    safe = np.where(ok, det, 1.0)
    t = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) / safe[:, None]
    return t, ok


def compute_face_frames(vertices: Array, faces: Array, uv: Optional[Array] = None) -> Array:
    """Right-handed frames with columns (t, b, n), n the geometric face normal.

    The tangent follows dP/du when UVs are available and non-degenerate, a
    projected world reference axis otherwise.
    """
    n = face_normals(vertices, faces)
    t = _reference_tangents(n)
    if uv is not None:
        tu, ok = _uv_tangents(vertices, faces, uv)
        tu = tu - np.sum(tu * n, axis=1, keepdims=True) * n
        ok &= np.linalg.norm(tu, axis=1) > _EPS
        t[ok] = _normalize(tu[ok])
    b = np.cross(n, t)
    return np.stack([t, b, n], axis=2)


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle surface; ``face_frames[f][:, k]`` is the k-th frame axis of face f.

    ``uv`` is per-corner, shape (n_faces, 3, 2).
    """

    vertices: Array
    faces: Array
    vertex_normals: Array
    face_frames: Array
    uv: Optional[Array] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_arrays(cls, vertices, faces, vertex_normals=None, uv=None) -> "TriangleMesh":
        vertices = check_array(vertices, shape=(None, 3), name="vertices")
        faces = np.asarray(faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must have shape (m, 3), got {faces.shape}")
        if len(vertices) == 0 or len(faces) == 0:
            raise ValueError("mesh must have at least one vertex and one face")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise ValueError("face index out of range")
        if vertex_normals is None:
            vertex_normals = area_weighted_vertex_normals(vertices, faces)
        else:
            vertex_normals = _normalize(check_array(vertex_normals, shape=(len(vertices), 3), name="vertex_normals"))
        if uv is not None:
            uv = check_array(uv, shape=(len(faces), 3, 2), name="uv")
        frames = compute_face_frames(vertices, faces, uv)
        for a in (vertices, faces, vertex_normals, frames, uv):
            if a is not None:
                a.setflags(write=False)
        return cls(vertices, faces, vertex_normals, frames, uv)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def face_normals(self) -> Array:
        return self.face_frames[:, :, 2]

    @property
    def bounds(self) -> tuple[Array, Array]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    @property
    def edges(self) -> Array:
        if "edges" not in self._cache:
            e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
            e = np.sort(e, axis=1)
            self._cache["edges"] = np.unique(e, axis=0)
        return self._cache["edges"]

    @property
    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    @property
    def face_areas(self) -> Array:
        return 0.5 * np.linalg.norm(face_normals(self.vertices, self.faces, unit=False), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    def has_uv(self) -> bool:
        return self.uv is not None

    def interpolate_uv(self, face_id: Array, bary: Array) -> Array:
        if self.uv is None:
            raise ValueError("mesh has no UV coordinates")
        return np.einsum("nk,nkc->nc", bary, self.uv[face_id])

    def point_on_face(self, face_id: Array, bary: Array) -> Array:
        tri = self.vertices[self.faces[face_id]]
        return np.einsum("nk,nkc->nc", bary, tri)


# ---------------------------------------------------------------------------
# procedural meshes used by the synthetic scenes and tests


def grid_plane(size: float = 1.0, n: int = 11, center=(0.0, 0.0, 0.0), with_uv: bool = True,
               origin_corner: bool = False) -> TriangleMesh:
    """Square z=const plane of ``n`` x ``n`` vertices; vertex (i, j) sits at i/(n-1), j/(n-1) of the side."""
    idx = np.arange(n)
    # integer ratios keep vertex coordinates like 0.3 exact
    frac = idx / (n - 1)
    if origin_corner:
        xs = frac * size + center[0]
        ys = frac * size + center[1]
    else:
        xs = (frac - 0.5) * size + center[0]
        ys = (frac - 0.5) * size + center[1]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    V = np.stack([X.ravel(), Y.ravel(), np.full(n * n, float(center[2]))], axis=1)
    vid = (idx[:, None] * n + idx[None, :])
    a = vid[:-1, :-1].ravel()
    b = vid[1:, :-1].ravel()
    c = vid[1:, 1:].ravel()
    d = vid[:-1, 1:].ravel()
    F = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    N = np.tile([0.0, 0.0, 1.0], (n * n, 1))
    uv = None
    if with_uv:
        vuv = np.stack([np.repeat(frac, n), np.tile(frac, n)], axis=1)
        uv = vuv[F]
    return TriangleMesh.from_arrays(V, F, N, uv)


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron (10*4^k+2 vertices; 2562 for k=4) with radial normals."""
    t = (1.0 + 5 ** 0.5) / 2.0
    V = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    F = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in V]
    faces = F
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    Vn = np.array(verts)
    return TriangleMesh.from_arrays(Vn * radius, np.array(faces), Vn)


def uv_sphere(n_lat: int = 16, n_lon: int = 32, radius: float = 1.0) -> TriangleMesh:
    """Latitude-longitude sphere with a single-chart UV atlas (u = longitude, v = colatitude)."""
    theta = np.linspace(0.0, np.pi, n_lat + 1)
    phi = np.linspace(0.0, 2 * np.pi, n_lon + 1)[:-1]
    verts = [(0.0, 0.0, 1.0)]
    for th in theta[1:-1]:
        for ph in phi:
            verts.append((np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)))
    verts.append((0.0, 0.0, -1.0))
    V = np.array(verts)
    south = len(V) - 1

    def ring(i, j):  # i in 1..n_lat-1
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces, uvs = [], []
    for j in range(n_lon):
        u0, u1 = j / n_lon, (j + 1) / n_lon
        v1 = theta[1] / np.pi
        faces.append((0, ring(1, j), ring(1, j + 1)))
        uvs.append(((0.5 * (u0 + u1), 0.0), (u0, v1), (u1, v1)))
        for i in range(1, n_lat - 1):
            va, vb = theta[i] / np.pi, theta[i + 1] / np.pi
            a, b, c, d = ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1)
            faces.append((a, b, c))
            uvs.append(((u0, va), (u0, vb), (u1, vb)))
            faces.append((a, c, d))
            uvs.append(((u0, va), (u1, vb), (u1, va)))
        vl = theta[n_lat - 1] / np.pi
        faces.append((ring(n_lat - 1, j), south, ring(n_lat - 1, j + 1)))
        uvs.append(((u0, vl), (0.5 * (u0 + u1), 1.0), (u1, vl)))
    return TriangleMesh.from_arrays(V * radius, np.array(faces), V, np.array(uvs))


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with split vertices so every face has a flat normal."""
    hx, hy, hz = (0.5 * s for s in size)
    c = np.asarray(center, dtype=np.float64)
    quads = [
        ((1, 0, 0), [(hx, -hy, -hz), (hx, hy, -hz), (hx, hy, hz), (hx, -hy, hz)]),
        ((-1, 0, 0), [(-hx, hy, -hz), (-hx, -hy, -hz), (-hx, -hy, hz), (-hx, hy, hz)]),
        ((0, 1, 0), [(hx, hy, -hz), (-hx, hy, -hz), (-hx, hy, hz), (hx, hy, hz)]),
        ((0, -1, 0), [(-hx, -hy, -hz), (hx, -hy, -hz), (hx, -hy, hz), (-hx, -hy, hz)]),
        ((0, 0, 1), [(-hx, -hy, hz), (hx, -hy, hz), (hx, hy, hz), (-hx, hy, hz)]),
        ((0, 0, -1), [(-hx, hy, -hz), (hx, hy, -hz), (hx, -hy, -hz), (-hx, -hy, -hz)]),
    ]
    V, N, F = [], [], []
    for n, q in quads:
        base = len(V)
        V += q
        N += [n] * 4
        F += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
    return TriangleMesh.from_arrays(np.array(V) + c, np.array(F), np.array(N, dtype=np.float64))
