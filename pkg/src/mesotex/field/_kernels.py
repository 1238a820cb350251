"""Compiled hash-grid gather and scatter loops."""

import numba as nb
import numpy as np

P1 = np.uint64(2654435761)
P2 = np.uint64(805459861)


@nb.njit(cache=True, parallel=True)
def encode_kernel(p, resolutions, tables, index, weight, frac, out):
    N = p.shape[0]
    L, T, F = tables.shape
    mask = np.uint64(T - 1)
    for n in nb.prange(N):
        for l in range(L):
            res = resolutions[l]
            b0 = np.floor(p[n, 0] * res)
            b1 = np.floor(p[n, 1] * res)
            b2 = np.floor(p[n, 2] * res)
            f0 = p[n, 0] * res - b0
            f1 = p[n, 1] * res - b1
            f2 = p[n, 2] * res - b2
            frac[l, n, 0] = f0
            frac[l, n, 1] = f1
            frac[l, n, 2] = f2
            i0 = np.int64(b0)
            i1 = np.int64(b1)
            i2 = np.int64(b2)
            for f in range(F):
                out[n, l * F + f] = 0.0
            for c in range(8):
                dx = c & 1
                dy = (c >> 1) & 1
                dz = (c >> 2) & 1
                h = (np.uint64(i0 + dx)) ^ (np.uint64(i1 + dy) * P1) ^ (np.uint64(i2 + dz) * P2)
                e = np.int64(h & mask)
                w = (f0 if dx else 1.0 - f0) * (f1 if dy else 1.0 - f1) * (f2 if dz else 1.0 - f2)
                index[l, n, c] = l * T + e
                weight[l, n, c] = w
                for f in range(F):
                    out[n, l * F + f] += w * tables[l, e, f]


@nb.njit(cache=True)
def scatter_kernel(index, weight, grad_out, grad_flat):
    # serial loop: the summation order is fixed, so results are reproducible
    L, N, _ = index.shape
    F = grad_flat.shape[1]
    for l in range(L):
        for n in range(N):
            for c in range(8):
                r = index[l, n, c]
                w = weight[l, n, c]
                for f in range(F):
                    grad_flat[r, f] += w * grad_out[n, l * F + f]


@nb.njit(cache=True, parallel=True)
def grad_p_kernel(index, frac, resolutions, tables_flat, grad_out, grad_p):
    L, N, _ = index.shape
    F = tables_flat.shape[1]
    for n in nb.prange(N):
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for l in range(L):
            res = resolutions[l]
            f0 = frac[l, n, 0]
            f1 = frac[l, n, 1]
            f2 = frac[l, n, 2]
            for c in range(8):
                dx = c & 1
                dy = (c >> 1) & 1
                dz = (c >> 2) & 1
                gv = 0.0
                r = index[l, n, c]
                for f in range(F):
                    gv += tables_flat[r, f] * grad_out[n, l * F + f]
                wx = f0 if dx else 1.0 - f0
                wy = f1 if dy else 1.0 - f1
                wz = f2 if dz else 1.0 - f2
                sx = 1.0 if dx else -1.0
                sy = 1.0 if dy else -1.0
                sz = 1.0 if dz else -1.0
                g0 += res * gv * sx * wy * wz
                g1 += res * gv * wx * sy * wz
                g2 += res * gv * wx * wy * sz
        grad_p[n, 0] = g0
        grad_p[n, 1] = g1
        grad_p[n, 2] = g2
