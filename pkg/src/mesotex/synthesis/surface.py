"""Latent texture synthesis directly over a UV-mapped target mesh.

Each iteration picks an unfilled vertex near the filled frontier, marches a patch template over
the surface along the local direction field, fetches what is already synthesized under it,
matches a library patch coarse-to-fine, and pastes it into the UV feature map.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, dijkstra, maximum_flow
from scipy.spatial import cKDTree

from .._rng import make_rng
from .._validation import MesotexWarning
from ..geometry.bvh import raycast_batch
from ..geometry.mesh import TriangleMesh
from ..geometry.projection import BaseProjector
from ..shading.normals import matrix_to_quat, quat_to_matrix
from ..texture import SynthesizedTexture, sample_bilinear, uv_to_texel, write_texture
from ._raster import rasterize
from .library import K_CANDIDATES, TAU, PatchLibrary, candidate_probabilities
from .patches import canonical_quat

log = logging.getLogger(__name__)

KEEP_FRACTION = 0.125
DISTORTION = 0.2
BAND = (0.5, 1.0)
FILL_TARGET = 0.99


# --- direction field ---------------------------------------------------------


@dataclass(frozen=True)
class VectorFieldOnMesh:
    vectors: np.ndarray  # (n_vertices, 3) unit, tangent

    def at(self, mesh: TriangleMesh, face: np.ndarray, bary: np.ndarray, normal: np.ndarray) -> np.ndarray:
        v = np.einsum("nk,nkc->nc", bary, self.vectors[mesh.faces[face]])
        return _tangent_unit(v, normal)


def _fallback_axis(n: np.ndarray) -> np.ndarray:
    ref = np.where(np.abs(n[:, :1]) > 0.9, np.array([[0.0, 1.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    return ref - np.sum(ref * n, axis=1, keepdims=True) * n


def _tangent_unit(v, n, warn: bool = False):
    v = v - np.sum(v * n, axis=1, keepdims=True) * n
    norm = np.linalg.norm(v, axis=1)
    bad = norm < 1e-9
    if bad.any():
        if warn:
            warnings.warn(f"{int(bad.sum())} field vectors cancelled; using a fallback tangent", MesotexWarning)
        fb = _fallback_axis(n[bad])
        v[bad] = fb
        norm[bad] = np.linalg.norm(fb, axis=1)
    return v / norm[:, None]


def edge_graph(mesh: TriangleMesh):
    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    return coo_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]),
                                                 np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n)).tocsr()


def interpolate_vector_field(mesh: TriangleMesh, controls) -> VectorFieldOnMesh:
    """Inverse edge-path-distance weighted blend of control vectors, each projected to the vertex tangent plane."""
    controls = list(controls)
    if not controls:
        raise ValueError("at least one control vector is required")
    ids = np.array([int(c[0]) for c in controls])
    vecs = np.array([np.asarray(c[1], dtype=np.float64) for c in controls])
    nrm = mesh.vertex_normals
    if np.any(np.abs(np.sum(vecs * nrm[ids], axis=1)) > 1e-6 * np.linalg.norm(vecs, axis=1)):
        raise ValueError("control vectors must be tangent at their vertices")
    dist = dijkstra(edge_graph(mesh), indices=ids)  # (n_controls, n_vertices)
    exact = dist == 0
    w = np.where(np.isfinite(dist), 1.0 / np.where(exact, 1.0, dist), 0.0)
    at_control = exact.any(axis=0)
    w[:, at_control] = exact[:, at_control].astype(float)
    n = nrm[None, :, :]
    proj = vecs[:, None, :] - np.sum(vecs[:, None, :] * n, axis=2, keepdims=True) * n
    pn = np.linalg.norm(proj, axis=2, keepdims=True)
    proj = proj / np.maximum(pn, 1e-300)
    v = np.einsum("cv,cvk->vk", w, proj)
    return VectorFieldOnMesh(_tangent_unit(v, nrm, warn=True))


# --- UV atlas target ----------------------------------------------------------


def chart_ids(mesh: TriangleMesh) -> np.ndarray:
    """Connected components of faces sharing an edge with identical UVs on both sides."""
    F, uv = mesh.faces, np.round(mesh.uv, 9)
    rows = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        va, vb = F[:, a], F[:, b]
        swap = va > vb
        lo, hi = np.where(swap, vb, va), np.where(swap, va, vb)
        ua = np.where(swap[:, None], uv[:, b], uv[:, a])
        ub = np.where(swap[:, None], uv[:, a], uv[:, b])
        rows.append(np.column_stack([lo, hi, ua, ub, np.arange(len(F))]))
    E = np.concatenate(rows)
    order = np.lexsort(E[:, :6].T[::-1])
    E = E[order]
    same = np.all(E[1:, :6] == E[:-1, :6], axis=1)
    a, b = E[:-1, 6][same].astype(np.int64), E[1:, 6][same].astype(np.int64)
    m = len(F)
    adj = coo_matrix((np.ones(len(a)), (a, b)), shape=(m, m))
    return connected_components(adj, directed=False)[1]


@dataclass
class UvAtlasTarget:
    """UV feature map of a target mesh with back-mapped surface points per chart texel."""

    mesh: TriangleMesh
    texture: SynthesizedTexture
    texel_face: np.ndarray   # (H, W) host face, -1 in gutters
    texel_bary: np.ndarray   # (H, W, 3)
    position: np.ndarray     # (H, W, 3)
    texel_chart: np.ndarray  # (H, W) chart id, -1 in gutters
    face_chart: np.ndarray
    face_scale: np.ndarray   # texels per world unit, per face
    corner_texels: np.ndarray  # (n_faces, 3, 2) nearest chart texel of every face corner

    @classmethod
    def create(cls, mesh: TriangleMesh, H: int, W: int, C: int, dim_f: int) -> "UvAtlasTarget":
        if not mesh.has_uv():
            raise ValueError("target mesh needs UV coordinates")
        r, c = uv_to_texel(mesh.uv, H, W)
        tri = np.stack([r, c], axis=-1)
        face, bary = rasterize(tri, H, W)
        inside = face >= 0
        pos = np.zeros((H, W, 3))
        pos[inside] = mesh.point_on_face(face[inside], bary[inside])
        charts = chart_ids(mesh)
        tchart = np.where(inside, charts[np.maximum(face, 0)], -1)
        d1, d2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
        uv_area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        scale = np.sqrt(uv_area / np.maximum(mesh.face_areas, 1e-300))
        # nearest chart texel of each corner, searched among texels of the same face first
        cr = np.clip(np.rint(r), 0, H - 1).astype(np.int64)
        cc = np.clip(np.rint(c), 0, W - 1).astype(np.int64)
        corner = np.stack([cr, cc], axis=-1)
        if inside.any():
            _, (ii, jj) = ndimage.distance_transform_edt(~inside, return_indices=True)
            corner = np.stack([ii[cr, cc], jj[cr, cc]], axis=-1)
        return cls(mesh, SynthesizedTexture.empty(H, W, C, dim_f), face, bary, pos, tchart, charts, scale, corner)

    @property
    def chart_mask(self) -> np.ndarray:
        return self.texel_face >= 0

    @property
    def filled(self) -> np.ndarray:
        return self.texture.filled & self.chart_mask

    def fill_fraction(self) -> float:
        return float(self.filled.sum() / max(self.chart_mask.sum(), 1))

    def vertex_filled(self) -> np.ndarray:
        """A vertex counts as grown once the texel under every one of its UV corners is filled."""
        m = self.mesh
        f = self.filled[self.corner_texels[..., 0], self.corner_texels[..., 1]]  # (n_faces, 3)
        out = np.ones(m.n_vertices, dtype=bool)
        np.logical_and.at(out, m.faces.ravel(), f.ravel())
        return out


# --- region picking -------------------------------------------------------------


def pick_region(target: UvAtlasTarget, rng: np.random.Generator, radius: float,
                blocked: Optional[np.ndarray] = None, band=BAND) -> Optional[int]:
    """Unfilled vertex whose distance to the filled region lies in ``band`` patch radii.

    Falls back to the nearest unfilled vertex when the band is empty; None once every vertex is grown.
    """
    cand = ~target.vertex_filled()
    if blocked is not None:
        cand &= ~blocked
    ids = np.flatnonzero(cand)
    if len(ids) == 0:
        return None
    filled = target.filled
    if not filled.any():
        return int(rng.choice(ids))
    d, _ = cKDTree(target.position[filled]).query(target.mesh.vertices[ids])
    inb = (d >= band[0] * radius) & (d <= band[1] * radius)
    if inb.any():
        return int(rng.choice(ids[inb]))
    return int(ids[np.argmin(d)])


# --- patch template -------------------------------------------------------------


class PatchTemplate(NamedTuple):
    points: np.ndarray  # (R, R, 3)
    face: np.ndarray    # (R, R)
    bary: np.ndarray    # (R, R, 3)
    uv: np.ndarray      # (R, R, 2)
    frames: np.ndarray  # (R, R, 3, 3) columns (t, b, n) carried along the march
    on: np.ndarray      # (R, R) grid points that landed on the surface
    spacing: float


def _march(projector: BaseProjector, p, d, n, steps, max_dev):
    """Walk from ``p`` along tangent ``d`` by ``steps`` (list of lengths), re-projecting each step."""
    mesh = projector.mesh
    k = len(p)
    out_p, out_f, out_b, out_d, out_n, out_on = [], [], [], [], [], []
    alive = np.ones(k, dtype=bool)
    for h in steps:
        raw = p + h * d
        # cast down the previous normal from a lifted origin; points on the surface itself are t = 0
        fid, t, bary = raycast_batch(projector.bvh, mesh, raw + h * n, -n, 2.0 * h)
        ok = (fid >= 0) & alive
        x = raw + (h - np.where(ok, t, h))[:, None] * n
        ok &= np.linalg.norm(x - raw, axis=1) <= max_dev * h
        alive = ok
        face = np.where(ok, fid, 0)
        # interpolated vertex normals keep neighbouring rows from converging at facet creases
        sn = np.einsum("nk,nkc->nc", np.where(ok[:, None], bary, 1.0 / 3.0), mesh.vertex_normals[mesh.faces[face]])
        sn /= np.maximum(np.linalg.norm(sn, axis=1, keepdims=True), 1e-300)
        nn = np.where(ok[:, None], sn, n)
        p = np.where(ok[:, None], x, raw)
        d = d - np.sum(d * nn, axis=1, keepdims=True) * nn
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        n = nn
        out_p.append(p)
        out_f.append(face)
        out_b.append(np.where(ok[:, None], bary, 0.0))
        out_d.append(d)
        out_n.append(n)
        out_on.append(ok)
    return [np.stack(a, axis=1) for a in (out_p, out_f, out_b, out_d, out_n, out_on)]


def build_template(projector: BaseProjector, point, face: int, tangent, R: int, world_size: float,
                   distortion: float = DISTORTION) -> Optional[PatchTemplate]:
    """R x R surface grid centred at ``point`` by tangent-plane projection marching; None if distorted."""
    mesh = projector.mesh
    if R % 2:
        raise ValueError("template resolution must be even")
    h = world_size / R
    n0 = mesh.face_normals[face]
    t0 = np.asarray(tangent, dtype=np.float64)
    t0 = t0 - np.dot(t0, n0) * n0
    t0 /= np.linalg.norm(t0)
    half = R // 2
    steps = [0.5 * h] + [h] * (half - 1)
    p0 = np.asarray(point, dtype=np.float64)[None]
    row = {}
    for sgn in (1.0, -1.0):
        row[sgn] = _march(projector, p0, sgn * t0[None], n0[None], steps, 0.5)
    # virtual centre row: columns half..R-1 from +t, half-1..0 from -t
    def cat(idx, flip_dir=False):
        a = row[-1.0][idx][0][::-1]
        b = row[1.0][idx][0]
        if flip_dir:
            a = -a
        return np.concatenate([a, b])

    cp, cf, cb, ct, cn, con = (cat(k, flip_dir=(k == 3)) for k in range(6))
    cbit = np.cross(cn, ct)
    grid = {}
    for sgn in (1.0, -1.0):
        grid[sgn] = _march(projector, cp, sgn * cbit, cn, steps, 0.5)
    P = np.concatenate([grid[-1.0][0][:, ::-1], grid[1.0][0]], axis=1).transpose(1, 0, 2)
    Fc = np.concatenate([grid[-1.0][1][:, ::-1], grid[1.0][1]], axis=1).T
    B = np.concatenate([grid[-1.0][2][:, ::-1], grid[1.0][2]], axis=1).transpose(1, 0, 2)
    bdir = np.concatenate([-grid[-1.0][3][:, ::-1], grid[1.0][3]], axis=1).transpose(1, 0, 2)
    N = np.concatenate([grid[-1.0][4][:, ::-1], grid[1.0][4]], axis=1).transpose(1, 0, 2)
    on = np.concatenate([grid[-1.0][5][:, ::-1], grid[1.0][5]], axis=1).T & con[None, :]
    if not on.any():
        return None
    T = np.cross(bdir, N)
    T /= np.maximum(np.linalg.norm(T, axis=-1, keepdims=True), 1e-300)
    frames = np.stack([T, np.cross(N, T), N], axis=-1)
    # edge-length distortion between neighbouring on-surface points
    for ax in (0, 1):
        a = np.take(P, np.arange(R - 1), axis=ax)
        b = np.take(P, np.arange(1, R), axis=ax)
        both = np.take(on, np.arange(R - 1), axis=ax) & np.take(on, np.arange(1, R), axis=ax)
        if both.any():
            dev = np.abs(np.linalg.norm(a - b, axis=-1)[both] / h - 1.0)
            if dev.max() > distortion:
                return None
    uv = np.zeros((R, R, 2))
    uv[on] = mesh.interpolate_uv(Fc[on], B[on])
    return PatchTemplate(P, Fc, B, uv, frames, on, h)


# --- fetching -------------------------------------------------------------------


def fetch_template_features(target: UvAtlasTarget, template: PatchTemplate):
    """(tile (R, R, C), mask (R, R)) from the filled part of the UV map under the template."""
    R = template.on.shape[0]
    tex = target.texture
    feats, valid = sample_bilinear(tex.features, target.filled, template.uv.reshape(-1, 2))
    mask = valid.reshape(R, R) & template.on
    tile = np.where(mask[..., None], feats.reshape(R, R, -1), 0.0)
    return tile, mask


# --- pyramids and matching ----------------------------------------------------------


def box_down(x: np.ndarray) -> np.ndarray:
    """2x2 box average over the two axes before the last; odd trailing rows/cols are dropped."""
    h, w = x.shape[-3] // 2 * 2, x.shape[-2] // 2 * 2
    x = x[..., :h, :w, :]
    return 0.25 * (x[..., 0::2, 0::2, :] + x[..., 1::2, 0::2, :] + x[..., 0::2, 1::2, :] + x[..., 1::2, 1::2, :])


def mask_down(m: np.ndarray) -> np.ndarray:
    h, w = m.shape[-2] // 2 * 2, m.shape[-1] // 2 * 2
    m = m[..., :h, :w]
    return m[..., 0::2, 0::2] & m[..., 1::2, 0::2] & m[..., 0::2, 1::2] & m[..., 1::2, 1::2]


@dataclass
class PatchPyramid:
    levels: list  # levels[0] is full resolution (P, R, R, dim_f); each next is the 2x2 box average

    @classmethod
    def build(cls, library: PatchLibrary, depth: Optional[int] = None, min_size: int = 4) -> "PatchPyramid":
        base = library.features[..., :library.dim_f].astype(np.float64)
        if depth is None:
            depth = max(0, int(math.floor(math.log2(max(library.R / min_size, 1)))))
        levels = [base]
        for _ in range(depth):
            if levels[-1].shape[1] < 2:
                break
            levels.append(box_down(levels[-1]))
        return cls(levels)

    @property
    def size(self) -> int:
        return len(self.levels[0])


def query_pyramid(tile: np.ndarray, mask: np.ndarray, depth: int):
    t, m = [tile], [mask]
    for _ in range(depth):
        t.append(box_down(t[-1]))
        m.append(mask_down(m[-1]))
    return t, m


def partial_pyramid(tile: np.ndarray, mask: np.ndarray, depth: int):
    """Masked-average pyramid where a coarse texel is kept if any child is synthesized.

    Only a heuristic filter: unlike :func:`query_pyramid` it is not comparable exactly with the
    library's box averages, so it is used for levels where the exact mask is empty.
    """
    t, m = [tile], [mask]
    for _ in range(depth):
        w = box_down(m[-1][..., None].astype(np.float64))
        v = box_down(t[-1] * m[-1][..., None])
        keep = w[..., 0] > 0
        t.append(np.where(keep[..., None], v / np.maximum(w, 1e-300), 0.0))
        m.append(keep)
    return t, m


def masked_errors(level: np.ndarray, ids: np.ndarray, tile: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean squared error over masked texels for each patch in ``ids``."""
    d = level[ids][:, mask, :] - tile[mask][None]
    return np.einsum("pnc,pnc->p", d, d) / mask.sum()


class CoarseToFineResult(NamedTuple):
    chosen: int
    candidates: np.ndarray
    errors: np.ndarray          # full-resolution masked errors of the final candidates
    full_comparisons: int       # texel comparisons at full resolution
    coarse_comparisons: int


def coarse_to_fine_match(tile, mask, pyramid: PatchPyramid, rng: np.random.Generator,
                         keep_fraction: float = KEEP_FRACTION, k: int = K_CANDIDATES,
                         temperature: float = TAU) -> CoarseToFineResult:
    """Filter the library level by level on masked mean error, then draw among the best k at full resolution."""
    P = pyramid.size
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        pid = int(rng.integers(P))
        return CoarseToFineResult(pid, np.array([pid]), np.zeros(1), 0, 0)
    depth = len(pyramid.levels) - 1
    tile = np.asarray(tile, dtype=np.float64)[..., :pyramid.levels[0].shape[-1]]
    qt, qm = query_pyramid(tile, mask, depth)
    st, sm = partial_pyramid(tile, mask, depth)
    ids = np.arange(P)
    coarse = 0
    for lv in range(depth, 0, -1):
        if len(ids) <= k:
            continue
        t_lv, m_lv = (qt[lv], qm[lv]) if qm[lv].any() else (st[lv], sm[lv])
        e = masked_errors(pyramid.levels[lv], ids, t_lv, m_lv)
        coarse += len(ids) * int(m_lv.sum())
        keep = max(k, int(math.ceil(keep_fraction * len(ids))))
        order = np.lexsort((ids, e))[:keep]
        ids = ids[order]
    e = masked_errors(pyramid.levels[0], ids, qt[0], qm[0])
    full = len(ids) * int(mask.sum())
    order = np.lexsort((ids, e))[:k]
    ids, e = ids[order], e[order]
    probs = candidate_probabilities(e, temperature)
    chosen = int(ids[rng.choice(len(ids), p=probs)])
    return CoarseToFineResult(chosen, ids, e, full, coarse)


def exhaustive_match(tile, mask, pyramid: PatchPyramid):
    """(best id, its error, all errors, comparisons) with every patch scored at full resolution."""
    mask = np.asarray(mask, dtype=bool)
    lv = pyramid.levels[0]
    if not mask.any():
        return 0, 0.0, np.zeros(len(lv)), 0
    e = masked_errors(lv, np.arange(len(lv)), np.asarray(tile, dtype=np.float64)[..., :lv.shape[-1]], mask)
    best = int(np.lexsort((np.arange(len(e)), e))[0])
    return best, float(e[best]), e, len(lv) * int(mask.sum())


# --- blending and pasting -------------------------------------------------------


def overlap_band(mask: np.ndarray, width: float) -> np.ndarray:
    """Synthesized texels within ``width`` texels of the unsynthesized part of the tile."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all() or not mask.any():
        return np.zeros_like(mask)
    return mask & (ndimage.distance_transform_edt(mask) <= width)


def overlap_take_new(old, new, mask, dim_f: int, width: Optional[float] = None) -> np.ndarray:
    """Minimum-error cut on the template grid: True where the new patch is used.

    Template overlaps have arbitrary shape, so the cut is an s-t minimum cut over the 4-connected
    grid (the 2-D generalization of the dynamic-programming seam): masked texels on the tile
    border stay old, unmasked texels are new, and cutting between neighbours s, t costs
    e(s) + e(t) with e the squared f-channel difference (2 e(s) when t is unmasked). With
    ``width``, texels deeper than that inside the synthesized region also stay old.
    """
    R0, R1 = mask.shape
    mask = np.asarray(mask, dtype=bool)
    border = np.zeros_like(mask)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    src_t = mask & border
    if width is not None:
        src_t |= mask & ~overlap_band(mask, width)
    if not mask.any() or not src_t.any():
        return np.ones_like(mask)
    if mask.all():
        return np.zeros_like(mask)
    e = np.sum((old[..., :dim_f] - new[..., :dim_f]) ** 2, axis=-1)
    e = np.where(mask, e, 0.0)
    n = R0 * R1
    idx = np.arange(n).reshape(R0, R1)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    ea, eb = e.ravel()[a], e.ravel()[b]
    ma, mb = mask.ravel()[a], mask.ravel()[b]
    # an unmasked neighbour has no old value; charge the masked side twice so border cuts are not free
    w = np.where(ma & mb, ea + eb, 2.0 * np.where(ma, ea, eb))
    # integer capacities for the flow solver; the total stays well inside int32
    scale = min(1e6, 2.0 ** 28 / (len(a) + 1)) / max(float(w.max()), 1e-12)
    cap = np.round(w * scale).astype(np.int64) + 1
    inf = np.int64(2 ** 30)
    S, T = n, n + 1
    src_ids, snk_ids = idx[src_t], idx[~mask]
    rows = np.concatenate([a, b, np.full(len(src_ids), S), snk_ids])
    cols = np.concatenate([b, a, src_ids, np.full(len(snk_ids), T)])
    caps = np.concatenate([cap, cap, np.full(len(src_ids), inf), np.full(len(snk_ids), inf)])
    G = csr_matrix((caps.astype(np.int32), (rows, cols)), shape=(n + 2, n + 2))
    flow = maximum_flow(G, S, T).flow
    resid = (G - flow).tocsr()
    resid.data = np.where(resid.data > 0, 1, 0).astype(np.int32)
    resid.eliminate_zeros()
    reach = breadth_first_order(resid, S, directed=True, return_predecessors=False)
    old_side = np.zeros(n + 2, dtype=bool)
    old_side[reach] = True
    return ~old_side[:n].reshape(R0, R1)


def alpha_ramp(mask: np.ndarray, width: float) -> np.ndarray:
    """Weight of the old content: 0 outside the synthesized region, rising to 1 ``width`` texels inside."""
    if not mask.any():
        return np.zeros(mask.shape)
    if mask.all():
        return np.ones(mask.shape)
    d = ndimage.distance_transform_edt(mask)
    return np.clip(d / max(width, 1e-12), 0.0, 1.0)


def _grid_triangles(R: int) -> np.ndarray:
    ii, jj = np.mgrid[:R - 1, :R - 1]
    a = ii * R + jj
    b = (ii + 1) * R + jj
    c = (ii + 1) * R + jj + 1
    d = ii * R + jj + 1
    return np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])


def paste_tile(target: UvAtlasTarget, template: PatchTemplate, values: np.ndarray, write: np.ndarray,
               quat_src: np.ndarray, hand_src: np.ndarray, patch_id: int) -> int:
    """Transfer template-grid values into UV texels by barycentric interpolation; returns texels written.

    Texels whose nearest template vertex has ``write`` False keep their current contents.
    Residual frames become T~_c^T T_template Q_patch on the texel's own face.
    """
    tex = target.texture
    H, W = target.texel_face.shape
    R = template.on.shape[0]
    tris = _grid_triangles(R)
    on = template.on.reshape(-1)
    face = template.face.reshape(-1)
    chart = np.where(on, target.face_chart[face], -1)
    ok = on[tris].all(axis=1) & (chart[tris[:, 0]] == chart[tris[:, 1]]) & (chart[tris[:, 0]] == chart[tris[:, 2]])
    r, c = uv_to_texel(template.uv.reshape(-1, 2), H, W)
    rc = np.stack([r, c], axis=-1)
    tri_rc = rc[tris]
    # reject grid triangles stretched across a UV seam
    pts = template.points.reshape(-1, 3)
    scale = target.face_scale[face]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        duv = np.linalg.norm(tri_rc[:, a] - tri_rc[:, b], axis=1)
        d3 = np.linalg.norm(pts[tris[:, a]] - pts[tris[:, b]], axis=1)
        lim = 3.0 * d3 * np.maximum(scale[tris[:, a]], scale[tris[:, b]]) + 2.0
        ok &= duv <= lim
    keep = np.flatnonzero(ok)
    hit = np.zeros((H, W), dtype=bool)
    vt, bw = np.zeros((0, 3), np.int64), np.zeros((0, 3))
    if len(keep):
        tid, bary = rasterize(tri_rc[keep], H, W)
        hit = (tid >= 0) & target.chart_mask
        hit[hit] &= target.texel_chart[hit] == chart[tris[keep[tid[hit]], 0]]
        vt, bw = tris[keep[tid[hit]]], bary[hit]  # (n, 3) template vertex ids and weights
    rr, cc = np.nonzero(hit)
    # empty texels the raster missed (degenerate UV such as poles) take the nearest template point in 3D
    lo, hi = pts[on].min(axis=0) - template.spacing, pts[on].max(axis=0) + template.spacing
    gap = target.chart_mask & ~target.filled & ~hit
    gap &= np.all((target.position >= lo) & (target.position <= hi), axis=-1)
    if gap.any():
        gr, gc = np.nonzero(gap)
        ids = np.flatnonzero(on)
        d, j = cKDTree(pts[ids]).query(target.position[gr, gc])
        gv = ids[j]
        # keep texels whose offset in the nearest point's tangent frame stays inside the grid
        off = target.position[gr, gc] - pts[gv]
        fr = template.frames.reshape(-1, 3, 3)[gv]
        gi = gv // R + np.einsum("nk,nk->n", off, fr[:, :, 1]) / template.spacing
        gj = gv % R + np.einsum("nk,nk->n", off, fr[:, :, 0]) / template.spacing
        close = (d <= template.spacing) & (gi >= 0) & (gi <= R - 1) & (gj >= 0) & (gj <= R - 1)
        gv = gv[close]
        rr, cc = np.concatenate([rr, gr[close]]), np.concatenate([cc, gc[close]])
        vt = np.concatenate([vt, np.repeat(gv[:, None], 3, axis=1)])
        bw = np.concatenate([bw, np.tile([1.0, 0.0, 0.0], (len(gv), 1))])
    if len(rr) == 0:
        return 0
    near = vt[np.arange(len(vt)), np.argmax(bw, axis=1)]
    # unfilled texels have nothing to keep, so they always take the new patch
    wmask = write.reshape(-1)[near] | ~target.filled[rr, cc]
    if not wmask.any():
        return 0
    vt, bw, near, rr, cc = vt[wmask], bw[wmask], near[wmask], rr[wmask], cc[wmask]
    vals = np.einsum("nk,nkc->nc", bw, values.reshape(R * R, -1)[vt])
    tex.features[rr, cc] = vals
    Qp = quat_to_matrix(quat_src.reshape(-1, 4)[near], hand_src.reshape(-1)[near])
    Tt = template.frames.reshape(-1, 3, 3)[near]
    Tc = target.mesh.face_frames[target.texel_face[rr, cc]]
    Qtex = np.einsum("nji,njk,nkl->nil", Tc, Tt, Qp)
    q, hnd = matrix_to_quat(Qtex)
    tex.quat[rr, cc] = canonical_quat(q)
    tex.handedness[rr, cc] = hnd
    tex.provenance[rr, cc] = np.uint32(patch_id)
    return len(rr)


def blend_and_paste(target: UvAtlasTarget, template: PatchTemplate, library: PatchLibrary, patch_id: int,
                    tile: np.ndarray, mask: np.ndarray, mode: str = "min_cut",
                    band: Optional[float] = None) -> int:
    """Resolve the overlap with the already synthesized tile and paste; returns texels written."""
    new = library.features[patch_id].astype(np.float64)
    quat = library.quat[patch_id].astype(np.float64)
    quat /= np.linalg.norm(quat, axis=-1, keepdims=True)
    hand = library.handedness[patch_id]
    if mode == "min_cut":
        write = overlap_take_new(tile, new, mask, library.dim_f, library.overlap)
        values = new
    elif mode == "alpha":
        lam = alpha_ramp(mask, library.overlap if band is None else band)
        values = lam[..., None] * tile + (1.0 - lam[..., None]) * new
        write = lam < 1.0
    else:
        raise ValueError(f"unknown blend mode {mode!r}")
    return paste_tile(target, template, values, write & template.on, quat, hand, patch_id)


# --- the growth loop --------------------------------------------------------------


@dataclass
class SurfaceSynthesisResult:
    target: UvAtlasTarget
    iterations: int
    history: list = field(default_factory=list)  # filled texel count after each productive iteration
    rejected_templates: int = 0
    unfilled_charts: list = field(default_factory=list)

    @property
    def texture(self) -> SynthesizedTexture:
        return self.target.texture


def _seed_from_texel(target: UvAtlasTarget, rng, radius: float, blocked: np.ndarray, band=BAND):
    """Unfilled chart texel near the frontier, for regions between vertices that stay empty."""
    cand = target.chart_mask & ~target.filled & ~blocked
    rr, cc = np.nonzero(cand)
    if len(rr) == 0:
        return None
    filled = target.filled
    if filled.any():
        d, _ = cKDTree(target.position[filled]).query(target.position[rr, cc])
        inb = (d >= band[0] * radius) & (d <= band[1] * radius)
        k = int(rng.choice(np.flatnonzero(inb))) if inb.any() else int(np.argmin(d))
    else:
        k = int(rng.integers(len(rr)))
    return int(rr[k]), int(cc[k])


def synthesize_on_surface(mesh: TriangleMesh, library: PatchLibrary, field: VectorFieldOnMesh,
                          seed: int = 0, resolution=(512, 512), world_size: Optional[float] = None,
                          mode: str = "min_cut", max_iterations: int = 100000,
                          fill_target: float = FILL_TARGET, projector: Optional[BaseProjector] = None,
                          pyramid: Optional[PatchPyramid] = None, band=BAND) -> SurfaceSynthesisResult:
    """Grow library patches over the target's UV atlas until every vertex (and ``fill_target`` of texels) is covered."""
    R = library.R
    H, W = resolution
    C = library.features.shape[-1]
    target = UvAtlasTarget.create(mesh, H, W, C, library.dim_f)
    projector = projector if projector is not None else BaseProjector(mesh)
    pyramid = pyramid if pyramid is not None else PatchPyramid.build(library)
    if world_size is None:
        world_size = 0.25 * np.sqrt(mesh.area)
    radius = 0.5 * world_size
    rng_pick = make_rng(seed, "surface/pick")
    rng_match = make_rng(seed, "surface/match")
    blocked_v = np.zeros(mesh.n_vertices, dtype=bool)
    blocked_t = np.zeros((H, W), dtype=bool)
    res = SurfaceSynthesisResult(target, 0)
    count = 0
    for it in range(max_iterations):
        v = pick_region(target, rng_pick, radius, blocked_v, band)
        if v is not None:
            fid = int(np.flatnonzero((mesh.faces == v).any(axis=1))[0])
            point = mesh.vertices[v]
            nrm = mesh.face_normals[fid:fid + 1]
            bary = (mesh.faces[fid] == v).astype(float)[None]
        else:
            if target.fill_fraction() >= fill_target:
                break
            s = _seed_from_texel(target, rng_pick, radius, blocked_t, band)
            if s is None:
                break
            fid = int(target.texel_face[s])
            point = target.position[s]
            nrm = mesh.face_normals[fid:fid + 1]
            bary = target.texel_bary[s][None]
        t_dir = field.at(mesh, np.array([fid]), bary, nrm)[0]
        res.iterations += 1
        tpl = build_template(projector, point, fid, t_dir, R, world_size)
        written = 0
        if tpl is not None:
            tile, mask = fetch_template_features(target, tpl)
            pid = coarse_to_fine_match(tile, overlap_band(mask, library.overlap), pyramid, rng_match).chosen
            written = blend_and_paste(target, tpl, library, pid, tile, mask, mode)
        else:
            res.rejected_templates += 1
        new_count = int(target.filled.sum())
        if new_count > count:
            count = new_count
            res.history.append(count)
        elif v is not None:
            blocked_v[v] = True
        else:
            blocked_t[s] = True
    charts = np.unique(target.texel_chart[target.chart_mask])
    res.unfilled_charts = [int(ch) for ch in charts if not target.filled[target.texel_chart == ch].any()]
    if res.unfilled_charts:
        warnings.warn(f"{len(res.unfilled_charts)} charts received no texture", MesotexWarning)
    log.info("surface synthesis: %d iterations, %.1f%% of chart texels filled", res.iterations,
             100 * target.fill_fraction())
    return res


def write_surface_result(path, result: SurfaceSynthesisResult, mesh_path: Optional[str] = None,
                         controls=None) -> None:
    """NRTX texture plus a JSON sidecar describing the target."""
    write_texture(path, result.texture)
    H, W = result.texture.features.shape[:2]
    meta = {"target_mesh": None if mesh_path is None else str(mesh_path), "atlas_resolution": [H, W],
            "vector_field_controls": [] if controls is None else
            [{"vertex": int(v), "vector": [float(x) for x in vec]} for v, vec in controls],
            "fill_fraction": result.target.fill_fraction(), "iterations": result.iterations}
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)


def bake_field(mesh: TriangleMesh, field, H: int, W: int, chunk: int = 65536) -> SynthesizedTexture:
    """Sample a captured field at the back-mapped point of every chart texel (identity residuals).

    Provenance is 0 on chart texels and unfilled in the gutters.
    """
    if not mesh.has_uv():
        raise ValueError("target mesh needs UV coordinates")
    r, c = uv_to_texel(mesh.uv, H, W)
    face, bary = rasterize(np.stack([r, c], axis=-1), H, W)
    inside = face >= 0
    pos = mesh.point_on_face(face[inside], bary[inside])
    parts = [np.concatenate(field.features(pos[a:a + chunk]), axis=1) for a in range(0, len(pos), chunk)]
    feats = np.concatenate(parts) if parts else np.zeros((0, 1))
    dim_f = field.features(pos[:1])[0].shape[1] if len(pos) else 1
    tex = SynthesizedTexture.empty(H, W, feats.shape[1], dim_f)
    tex.features[inside] = feats
    tex.provenance[inside] = 0
    return tex
