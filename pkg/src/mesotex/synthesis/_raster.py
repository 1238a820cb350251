# numba triangle rasterizer over texel centers (integer (row, col) coordinates).

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True)


@_jit
def raster_triangles(tri, H, W, out_tri, out_bary, tol):
    """First triangle (lowest index) covering each texel center wins; ``tri`` is (T, 3, 2) in (row, col)."""
    for k in range(tri.shape[0]):
        r0, c0 = tri[k, 0, 0], tri[k, 0, 1]
        r1, c1 = tri[k, 1, 0], tri[k, 1, 1]
        r2, c2 = tri[k, 2, 0], tri[k, 2, 1]
        det = (r1 - r0) * (c2 - c0) - (r2 - r0) * (c1 - c0)
        if abs(det) < 1e-14:
            continue
        rmin = max(int(np.ceil(min(r0, min(r1, r2)) - tol)), 0)
        rmax = min(int(np.floor(max(r0, max(r1, r2)) + tol)), H - 1)
        cmin = max(int(np.ceil(min(c0, min(c1, c2)) - tol)), 0)
        cmax = min(int(np.floor(max(c0, max(c1, c2)) + tol)), W - 1)
        for r in range(rmin, rmax + 1):
            for c in range(cmin, cmax + 1):
                if out_tri[r, c] >= 0:
                    continue
                b1 = ((r - r0) * (c2 - c0) - (r2 - r0) * (c - c0)) / det
                b2 = ((r1 - r0) * (c - c0) - (r - r0) * (c1 - c0)) / det
                b0 = 1.0 - b1 - b2
                if b0 >= -tol and b1 >= -tol and b2 >= -tol:
                    out_tri[r, c] = k
                    out_bary[r, c, 0] = b0
                    out_bary[r, c, 1] = b1
                    out_bary[r, c, 2] = b2


def rasterize(tri_rc: np.ndarray, H: int, W: int, tol: float = 1e-9):
    """(triangle id or -1, barycentric) per texel; barycentrics are clamped and renormalized."""
    out_tri = np.full((H, W), -1, dtype=np.int64)
    out_bary = np.zeros((H, W, 3))
    raster_triangles(np.ascontiguousarray(tri_rc, dtype=np.float64), H, W, out_tri, out_bary, tol)
    hit = out_tri >= 0
    b = np.clip(out_bary[hit], 0.0, None)
    out_bary[hit] = b / b.sum(axis=1, keepdims=True)
    return out_tri, out_bary
