"""Minimum-error boundary cuts and planar raster-scan quilting."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .._rng import make_rng
from ..texture import SynthesizedTexture

LAYOUTS = ("left", "top", "L")


class Seam(NamedTuple):
    path: np.ndarray  # one column per row
    cost: float
    mask: np.ndarray  # True where the new patch wins (j >= path[i])


def min_cut_seam(e) -> Seam:
    """Vertical minimum-cost path through error map ``e`` (h x w) with lateral steps of at most one.

    Cumulative costs run from the bottom row up; the path starts at the top-row argmin and follows
    the cheapest of (j-1, j, j+1) downward. Ties go to the smaller column.
    """
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or min(e.shape) < 1:
        raise ValueError("error map must be a non-empty 2-D array")
    h, w = e.shape
    E = np.empty_like(e)
    E[-1] = e[-1]
    for i in range(h - 2, -1, -1):
        nxt = E[i + 1]
        left = np.concatenate([[np.inf], nxt[:-1]])
        right = np.concatenate([nxt[1:], [np.inf]])
        E[i] = e[i] + np.minimum(np.minimum(left, nxt), right)
    path = np.empty(h, dtype=np.int64)
    path[0] = int(np.argmin(E[0]))
    for i in range(1, h):
        j = path[i - 1]
        lo, hi = max(j - 1, 0), min(j + 2, w)
        path[i] = lo + int(np.argmin(E[i, lo:hi]))
    mask = np.arange(w)[None, :] >= path[:, None]
    return Seam(path, float(E[0, path[0]]), mask)


def horizontal_seam(e) -> Seam:
    """Seam through the transposed map; ``path`` gives one row per column, mask is i >= path[j]."""
    s = min_cut_seam(np.asarray(e).T)
    return Seam(s.path, s.cost, s.mask.T)


def path_cost(e, path) -> float:
    e = np.asarray(e)
    return float(e[np.arange(len(path)), path].sum())


def exhaustive_min_path(e) -> float:
    """Brute force over every top-to-bottom path with |step| <= 1; the oracle for :func:`min_cut_seam`."""
    e = np.asarray(e, dtype=np.float64)
    h, w = e.shape
    if h == 1:
        return float(e[0].min())
    steps = np.array(np.meshgrid(*[[-1, 0, 1]] * (h - 1), indexing="ij")).reshape(h - 1, -1).T
    best = np.inf
    for j0 in range(w):
        cols = j0 + np.concatenate([np.zeros((len(steps), 1), np.int64), np.cumsum(steps, axis=1)], axis=1)
        ok = np.all((cols >= 0) & (cols < w), axis=1)
        if ok.any():
            c = cols[ok]
            best = min(best, float(e[np.arange(h)[None, :], c].sum(axis=1).min()))
    return best


def layout_mask(layout: str, R: int, overlap: int) -> np.ndarray:
    """Texels of an R x R tile that overlap already synthesized output."""
    ii, jj = np.mgrid[:R, :R]
    if layout == "left":
        return jj < overlap
    if layout == "top":
        return ii < overlap
    if layout == "L":
        return (jj < overlap) | (ii < overlap)
    raise ValueError(f"unknown overlap layout {layout!r}")


def seam_mask(err, layout: str, overlap: int) -> np.ndarray:
    """Full-tile mask of texels taken from the new patch, given the R x R error map."""
    R = err.shape[0]
    mask = np.ones((R, R), dtype=bool)
    if layout in ("left", "L"):
        s = min_cut_seam(err[:, :overlap])
        mask[:, :overlap] &= s.mask
    if layout in ("top", "L"):
        s = horizontal_seam(err[:overlap, :])
        mask[:overlap, :] &= s.mask
    return mask


def tile_origins(H: int, W: int, R: int, overlap: int):
    """Top-left corners of the raster tiles covering an H x W output, and the canvas size."""
    step = R - overlap
    ny = 1 + int(np.ceil(max(H - R, 0) / step))
    nx = 1 + int(np.ceil(max(W - R, 0) / step))
    return [(r * step, c * step) for r in range(ny) for c in range(nx)], (R + (ny - 1) * step, R + (nx - 1) * step)


def tile_layout(r: int, c: int):
    if r == 0 and c == 0:
        return None
    if r == 0:
        return "left"
    if c == 0:
        return "top"
    return "L"


def synthesize_planar(library, H: int, W: int, seed: int = 0, temperature: float = None,
                      candidates: int = None, mode: str = "matched") -> SynthesizedTexture:
    """Quilt an H x W texture from ``library`` by raster-scan growth.

    ``mode`` is "matched" (kd-tree candidates and min-cut seams), "random" (uniform patch choice,
    straight paste) or "random_cut" (uniform choice with min-cut seams).
    """
    from .library import K_CANDIDATES, TAU, match_candidates

    if mode not in ("matched", "random", "random_cut"):
        raise ValueError(f"unknown quilting mode {mode!r}")
    R, o, dim_f = library.R, library.overlap, library.dim_f
    if H < R or W < R:
        raise ValueError(f"output {H}x{W} is smaller than the patch size {R}")
    temperature = TAU if temperature is None else temperature
    candidates = K_CANDIDATES if candidates is None else candidates
    rng = make_rng(seed, f"quilt/{mode}")
    origins, (CH, CW) = tile_origins(H, W, R, o)
    C = library.features.shape[-1]
    out = SynthesizedTexture.empty(CH, CW, C, dim_f)
    for r, c in origins:
        layout = tile_layout(r, c)
        win = (slice(r, r + R), slice(c, c + R))
        if layout is None or mode != "matched":
            pid = int(rng.integers(library.size))
        else:
            query = out.features[win]
            pid = match_candidates(query, library, layout, rng, k=candidates, temperature=temperature).chosen
        patch_f = library.features[pid]
        if layout is None or mode == "random":
            take = np.ones((R, R), dtype=bool)
        else:
            err = np.sum((out.features[win][..., :dim_f] - patch_f[..., :dim_f]) ** 2, axis=-1)
            take = seam_mask(err, layout, o)
        out.features[win] = np.where(take[..., None], patch_f, out.features[win])
        out.quat[win] = np.where(take[..., None], library.quat[pid], out.quat[win])
        out.handedness[win] = np.where(take, library.handedness[pid], out.handedness[win])
        out.provenance[win] = np.where(take, np.uint32(pid), out.provenance[win])
    return SynthesizedTexture(out.features[:H, :W].copy(), out.quat[:H, :W].copy(),
                              out.handedness[:H, :W].copy(), out.provenance[:H, :W].copy(), dim_f)
