"""Spherical-harmonics environment lighting with diffuse and Phong-lobe convolution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .sh import SH_BAND, n_coeffs, sh_basis_grad

# clamped-cosine band factors for l = 0..4
A_HAT = np.array([np.pi, 2 * np.pi / 3, np.pi / 4, 0.0, -np.pi / 24])
DIFFUSE_ORDER = 2
SPECULAR_ORDER = 4


@dataclass
class SHLighting:
    """Per-channel coefficients (3, (order+1)^2)."""

    coeffs: np.ndarray = field(default_factory=lambda: np.zeros((3, n_coeffs(SPECULAR_ORDER))))
    order: int = SPECULAR_ORDER

    def __post_init__(self):
        self.coeffs = np.array(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (3, n_coeffs(self.order)):
            raise ValueError(f"coefficients must have shape (3, {n_coeffs(self.order)}), got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("lighting coefficients must be finite")

    @classmethod
    def constant(cls, radiance, order: int = SPECULAR_ORDER) -> "SHLighting":
        """Uniform environment of the given per-channel radiance."""
        c = np.zeros((3, n_coeffs(order)))
        c[:, 0] = np.broadcast_to(np.asarray(radiance, dtype=np.float64), 3) * np.sqrt(4 * np.pi)
        return cls(c, order)


def irradiance(n, lighting: SHLighting):
    """E(n) = sum_l A_l L_lm Y_lm(n) over l <= 2, per channel (m, 3)."""
    k = n_coeffs(DIFFUSE_ORDER)
    Y, _ = sh_basis_grad(n, DIFFUSE_ORDER)
    return (Y * A_HAT[SH_BAND[:k]]) @ lighting.coeffs[:, :k].T


def specular_bands(g):
    """rho_l(g) = exp(-l^2 / (2g)) for l = 0..4, shape (m, 5)."""
    l = np.arange(SPECULAR_ORDER + 1)
    return np.exp(-(l[None, :] ** 2) / (2.0 * np.asarray(g, dtype=np.float64).reshape(-1, 1)))


def reflect(d, n):
    return d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n


class ShadeCache(NamedTuple):
    n_f: np.ndarray
    d: np.ndarray
    r: np.ndarray
    k_d: np.ndarray
    k_s: np.ndarray
    g: np.ndarray
    Yn: np.ndarray
    dYn: np.ndarray
    Yr: np.ndarray
    dYr: np.ndarray
    rho: np.ndarray
    E: np.ndarray
    S: np.ndarray
    active: np.ndarray


def shade(n_c, n_f, d, k_d, k_s, g, lighting: SHLighting, need_cache: bool = False):
    """Color c = max(0, k_d * E(n_f) + k_s * S(reflect(d, n_f), g)).

    ``n_c`` is accepted for shading variants; the default model only uses the fine normal.
    """
    n_f = np.atleast_2d(np.asarray(n_f, dtype=np.float64))
    d = np.broadcast_to(np.atleast_2d(np.asarray(d, dtype=np.float64)), n_f.shape)
    m = n_f.shape[0]
    k_d = np.broadcast_to(np.asarray(k_d, dtype=np.float64).reshape(-1, 3) if np.ndim(k_d) else
                          np.full((1, 3), float(k_d)), (m, 3))
    k_s = np.broadcast_to(np.asarray(k_s, dtype=np.float64).reshape(-1), (m,))
    g = np.broadcast_to(np.asarray(g, dtype=np.float64).reshape(-1), (m,))
    kdiff = n_coeffs(DIFFUSE_ORDER)
    Yn, dYn = sh_basis_grad(n_f, DIFFUSE_ORDER)
    E = (Yn * A_HAT[SH_BAND[:kdiff]]) @ lighting.coeffs[:, :kdiff].T
    r = reflect(d, n_f)
    Yr, dYr = sh_basis_grad(r, lighting.order)
    rho = specular_bands(g)[:, SH_BAND[:n_coeffs(lighting.order)]]
    S = (Yr * rho) @ lighting.coeffs.T
    raw = k_d * E + k_s[:, None] * S
    c = np.maximum(raw, 0.0)
    if not need_cache:
        return c
    return c, ShadeCache(n_f, d, r, k_d, k_s, g, Yn, dYn, Yr, dYr, rho, E, S, raw > 0)


class ShadeGrads(NamedTuple):
    n_f: np.ndarray
    k_d: np.ndarray
    k_s: np.ndarray
    g: np.ndarray
    lighting: np.ndarray


def shade_backward(cache: ShadeCache, grad_c, lighting: SHLighting) -> ShadeGrads:
    gc = np.asarray(grad_c, dtype=np.float64) * cache.active
    L = lighting.coeffs
    kdiff = n_coeffs(DIFFUSE_ORDER)
    Ab = A_HAT[SH_BAND[:kdiff]]
    g_kd = gc * cache.E
    g_ks = np.sum(gc * cache.S, axis=1)
    # dS/dg through rho_l = exp(-l^2/(2g)): d rho/dg = rho * l^2 / (2 g^2)
    band = SH_BAND[:n_coeffs(lighting.order)]
    drho = cache.rho * (band[None, :] ** 2) / (2 * cache.g[:, None] ** 2)
    dS_dg = (cache.Yr * drho) @ L.T
    g_g = cache.k_s * np.sum(gc * dS_dg, axis=1)
    # normal: diffuse part plus specular part through r = d - 2(d.n)n
    wd = gc * cache.k_d                                  # (m, 3)
    coef_n = wd @ (L[:, :kdiff] * Ab)                    # (m, kdiff)
    g_n = np.einsum("mk,mkj->mj", coef_n, cache.dYn)
    ws = gc * cache.k_s[:, None]
    coef_r = ws @ L * cache.rho                          # (m, k)
    g_r = np.einsum("mk,mkj->mj", coef_r, cache.dYr)
    dn = np.sum(cache.d * cache.n_f, axis=1, keepdims=True)
    g_n += -2.0 * (cache.d * np.sum(cache.n_f * g_r, axis=1, keepdims=True) + dn * g_r)
    g_L = np.zeros_like(L)
    g_L[:, :kdiff] += (wd.T @ cache.Yn) * Ab
    g_L += ws.T @ (cache.Yr * cache.rho)
    return ShadeGrads(g_n, g_kd, g_ks, g_g, g_L)
