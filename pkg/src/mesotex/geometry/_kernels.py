# numba kernels for neighbour search, ray casting and projection onto the base mesh.
# All kernels are pure: they read immutable index arrays and write disjoint output rows.

import math

import numba as nb
import numpy as np

RAY_TMIN = 1e-7
# barycentric slack so rays through a shared vertex or edge hit at least one face
BARY_EPS = 1e-12

FLAG_TRUNCATED = 1
FLAG_DEGENERATE = 2
FLAG_ANTIPODAL = 4
FLAG_FALLBACK_DIR = 8
FLAG_MISS = 16

_jit = nb.njit(cache=True, nogil=True, fastmath=False)
_pjit = nb.njit(cache=True, nogil=True, fastmath=False, parallel=True)


# ---------------------------------------------------------------------------
# spatial bins


@_jit
def _insert(best_d, best_i, count, K, d2, idx):
    if count == K:
        if d2 > best_d[K - 1] or (d2 == best_d[K - 1] and idx > best_i[K - 1]):
            return count
        pos = K - 1
    else:
        pos = count
        count += 1
    while pos > 0 and (best_d[pos - 1] > d2 or (best_d[pos - 1] == d2 and best_i[pos - 1] > idx)):
        best_d[pos] = best_d[pos - 1]
        best_i[pos] = best_i[pos - 1]
        pos -= 1
    best_d[pos] = d2
    best_i[pos] = idx
    return count


@_jit
def _knn_one(x, verts, h, lo, dims, cell_start, items, K, best_d, best_i):
    c0 = math.floor(x[0] / h)
    c1 = math.floor(x[1] / h)
    c2 = math.floor(x[2] / h)
    r0 = int(c0) - lo[0]
    r1 = int(c1) - lo[1]
    r2 = int(c2) - lo[2]
    # rings that intersect the grid
    rmin = 0
    rmax = 0
    rel = (r0, r1, r2)
    for a in range(3):
        ra = rel[a]
        if ra < 0:
            da = -ra
        elif ra >= dims[a]:
            da = ra - dims[a] + 1
        else:
            da = 0
        if da > rmin:
            rmin = da
        far = max(abs(ra), abs(ra - dims[a] + 1))
        if far > rmax:
            rmax = far
    count = 0
    for r in range(rmin, rmax + 1):
        xa0 = max(r0 - r, 0)
        xa1 = min(r0 + r, dims[0] - 1)
        ya0 = max(r1 - r, 0)
        ya1 = min(r1 + r, dims[1] - 1)
        za0 = max(r2 - r, 0)
        za1 = min(r2 + r, dims[2] - 1)
        for ix in range(xa0, xa1 + 1):
            ex = abs(ix - r0) == r
            for iy in range(ya0, ya1 + 1):
                exy = ex or abs(iy - r1) == r
                for iz in range(za0, za1 + 1):
                    if not (exy or abs(iz - r2) == r):
                        continue
                    cell = (ix * dims[1] + iy) * dims[2] + iz
                    for p in range(cell_start[cell], cell_start[cell + 1]):
                        v = items[p]
                        dx = x[0] - verts[v, 0]
                        dy = x[1] - verts[v, 1]
                        dz = x[2] - verts[v, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        count = _insert(best_d, best_i, count, K, d2, v)
        if count == K:
            # distance from x to the outside of the cube of rings <= r
            lb = x[0] - (c0 - r) * h
            lb = min(lb, (c0 + r + 1) * h - x[0])
            lb = min(lb, x[1] - (c1 - r) * h)
            lb = min(lb, (c1 + r + 1) * h - x[1])
            lb = min(lb, x[2] - (c2 - r) * h)
            lb = min(lb, (c2 + r + 1) * h - x[2])
            lb = lb * (1.0 - 1e-9)
            if lb > 0.0 and lb * lb > best_d[K - 1]:
                break
    return count


@_pjit
def knn_batch(points, verts, h, lo, dims, cell_start, items, K):
    n = points.shape[0]
    ids = np.full((n, K), -1, dtype=np.int64)
    d2 = np.full((n, K), np.inf)
    counts = np.zeros(n, dtype=np.int64)
    for i in nb.prange(n):
        bd = np.empty(K)
        bi = np.empty(K, dtype=np.int64)
        c = _knn_one(points[i], verts, h, lo, dims, cell_start, items, K, bd, bi)
        for k in range(c):
            ids[i, k] = bi[k]
            d2[i, k] = bd[k]
        counts[i] = c
    return ids, d2, counts


# ---------------------------------------------------------------------------
# BVH traversal


@_jit
def _slab(o, d, lo, hi, tmin, tmax):
    t0 = tmin
    t1 = tmax
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return False, t0, t1
            continue
        inv = 1.0 / d[a]
        ta = (lo[a] - o[a]) * inv
        tb = (hi[a] - o[a]) * inv
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False, t0, t1
    return True, t0, t1


@_jit
def _tri_hit(o, d, v0, v1, v2):
    """Moller-Trumbore; returns (t, u, v) with t = nan on a miss."""
    e1x = v1[0] - v0[0]
    e1y = v1[1] - v0[1]
    e1z = v1[2] - v0[2]
    e2x = v2[0] - v0[0]
    e2y = v2[1] - v0[1]
    e2z = v2[2] - v0[2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.nan, 0.0, 0.0
    inv = 1.0 / det
    tx = o[0] - v0[0]
    ty = o[1] - v0[1]
    tz = o[2] - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return np.nan, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return np.nan, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@_jit
def ray_bvh(o, d, tmax, verts, faces, node_lo, node_hi, node_left, node_right,
            node_start, node_count, tri_order):
    best_t = tmax
    best_f = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        ok, t0, t1 = _slab(o, d, node_lo[nd], node_hi[nd], 0.0, best_t)
        if not ok:
            continue
        if node_left[nd] < 0:
            for p in range(node_start[nd], node_start[nd] + node_count[nd]):
                f = tri_order[p]
                t, u, v = _tri_hit(o, d, verts[faces[f, 0]], verts[faces[f, 1]], verts[faces[f, 2]])
                if t == t and t > RAY_TMIN and (t < best_t or (t == best_t and (best_f < 0 or f < best_f))):
                    best_t = t
                    best_f = f
                    best_u = u
                    best_v = v
        else:
            stack[sp] = node_left[nd]
            sp += 1
            stack[sp] = node_right[nd]
            sp += 1
    return best_f, best_t, best_u, best_v


@_pjit
def raycast_batch(origins, dirs, tmax, verts, faces, node_lo, node_hi, node_left, node_right,
                  node_start, node_count, tri_order):
    n = origins.shape[0]
    face = np.full(n, -1, dtype=np.int64)
    t = np.full(n, np.inf)
    bary = np.zeros((n, 3))
    for i in nb.prange(n):
        f, tt, u, v = ray_bvh(origins[i], dirs[i], tmax[i], verts, faces, node_lo, node_hi,
                              node_left, node_right, node_start, node_count, tri_order)
        if f >= 0:
            face[i] = f
            t[i] = tt
            bary[i, 0] = 1.0 - u - v
            bary[i, 1] = u
            bary[i, 2] = v
    return face, t, bary


@_pjit
def shell_interval_batch(origins, dirs, s_max, verts, faces, node_lo, node_hi, node_left,
                         node_right, node_start, node_count, tri_order):
    """Entry/exit parameters of each ray against the union of s_max-dilated triangle boxes."""
    n = origins.shape[0]
    t_in = np.full(n, np.inf)
    t_out = np.full(n, -np.inf)
    lo = np.empty(3)
    hi = np.empty(3)
    for i in nb.prange(n):
        o = origins[i]
        d = dirs[i]
        stack = np.empty(128, dtype=np.int64)
        sp = 1
        stack[0] = 0
        b_in = np.inf
        b_out = -np.inf
        tlo = np.empty(3)
        thi = np.empty(3)
        while sp > 0:
            sp -= 1
            nd = stack[sp]
            for a in range(3):
                tlo[a] = node_lo[nd, a] - s_max
                thi[a] = node_hi[nd, a] + s_max
            ok, t0, t1 = _slab(o, d, tlo, thi, 0.0, np.inf)
            if not ok:
                continue
            # skip nodes that cannot widen the current interval
            if t0 >= b_in and t1 <= b_out:
                continue
            if node_left[nd] < 0:
                for p in range(node_start[nd], node_start[nd] + node_count[nd]):
                    f = tri_order[p]
                    for a in range(3):
                        m0 = min(verts[faces[f, 0], a], verts[faces[f, 1], a], verts[faces[f, 2], a])
                        m1 = max(verts[faces[f, 0], a], verts[faces[f, 1], a], verts[faces[f, 2], a])
                        tlo[a] = m0 - s_max
                        thi[a] = m1 + s_max
                    ok2, u0, u1 = _slab(o, d, tlo, thi, 0.0, np.inf)
                    if ok2:
                        if u0 < b_in:
                            b_in = u0
                        if u1 > b_out:
                            b_out = u1
            else:
                stack[sp] = node_left[nd]
                sp += 1
                stack[sp] = node_right[nd]
                sp += 1
        t_in[i] = b_in
        t_out[i] = b_out
    return t_in, t_out


# ---------------------------------------------------------------------------
# projection onto the base shape


@_jit
def _coarse_normal(x, verts, vnormals, ids, d2, count, w, eps):
    flags = 0
    out = np.zeros(3)
    if count == 0:
        out[2] = 1.0
        return out, FLAG_DEGENERATE
    v1 = ids[0]
    d1 = math.sqrt(d2[0])
    if d1 < eps:
        for a in range(3):
            out[a] = vnormals[v1, a]
        return out, FLAG_DEGENERATE
    W = 1.0 / w
    for k in range(count):
        W += 1.0 / math.sqrt(d2[k])
    # second term of the weighted interpolation sits inside the sum over k
    for k in range(count):
        dk = math.sqrt(d2[k])
        for a in range(3):
            out[a] += (vnormals[ids[k], a] / dk + (x[a] - verts[v1, a]) / (w * d1)) / W
    nrm = math.sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2])
    if not nrm > 1e-300:
        for a in range(3):
            out[a] = vnormals[v1, a]
        return out, FLAG_ANTIPODAL
    for a in range(3):
        out[a] /= nrm
    return out, flags


@_pjit
def coarse_normal_batch(points, verts, vnormals, h, lo, dims, cell_start, items, K, w, eps):
    n = points.shape[0]
    out = np.zeros((n, 3))
    flags = np.zeros(n, dtype=np.int64)
    for i in nb.prange(n):
        bd = np.empty(K)
        bi = np.empty(K, dtype=np.int64)
        c = _knn_one(points[i], verts, h, lo, dims, cell_start, items, K, bd, bi)
        nc, fl = _coarse_normal(points[i], verts, vnormals, bi, bd, c, w, eps)
        if c < K:
            fl |= FLAG_TRUNCATED
        for a in range(3):
            out[i, a] = nc[a]
        flags[i] = fl
    return out, flags


@_pjit
def project_batch(points, given_normals, use_given, verts, vnormals, faces, fnormals,
                  h, lo, dims, cell_start, items, K, w, eps,
                  node_lo, node_hi, node_left, node_right, node_start, node_count, tri_order, tmax):
    n = points.shape[0]
    xc = np.zeros((n, 3))
    s = np.zeros(n)
    nc_out = np.zeros((n, 3))
    face = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    flags = np.zeros(n, dtype=np.int64)
    for i in nb.prange(n):
        x = points[i]
        fl = 0
        if use_given:
            nc = given_normals[i].copy()
        else:
            bd = np.empty(K)
            bi = np.empty(K, dtype=np.int64)
            c = _knn_one(x, verts, h, lo, dims, cell_start, items, K, bd, bi)
            nc, fl = _coarse_normal(x, verts, vnormals, bi, bd, c, w, eps)
            if c < K:
                fl |= FLAG_TRUNCATED
        dneg = -nc
        f, t, u, v = ray_bvh(x, dneg, tmax, verts, faces, node_lo, node_hi, node_left,
                             node_right, node_start, node_count, tri_order)
        sign = 1.0
        if f < 0:
            f, t, u, v = ray_bvh(x, nc, tmax, verts, faces, node_lo, node_hi, node_left,
                                 node_right, node_start, node_count, tri_order)
            sign = -1.0
            fl |= FLAG_FALLBACK_DIR
        if f < 0:
            flags[i] = fl | FLAG_MISS
            nc_out[i] = nc
            continue
        sv = sign * t
        # orient n_c with the hit face so s is positive on the face-normal side
        if nc[0] * fnormals[f, 0] + nc[1] * fnormals[f, 1] + nc[2] * fnormals[f, 2] < 0.0:
            nc = -nc
            sv = -sv
        b0 = 1.0 - u - v
        for a in range(3):
            xc[i, a] = b0 * verts[faces[f, 0], a] + u * verts[faces[f, 1], a] + v * verts[faces[f, 2], a]
            nc_out[i, a] = nc[a]
        s[i] = sv
        face[i] = f
        bary[i, 0] = b0
        bary[i, 1] = u
        bary[i, 2] = v
        flags[i] = fl
    return xc, s, nc_out, face, bary, flags
