"""Real spherical harmonics up to band 4, evaluated as polynomials in (x, y, z)."""

from __future__ import annotations

import numpy as np

MAX_ORDER = 4

_pi = np.pi
# each basis function is a list of (coefficient, (a, b, c)) meaning coefficient * x^a y^b z^c,
# ordered by (l, m) with m = -l..l; z^2 - 1 style terms are written out without using x^2+y^2+z^2 = 1
_C = {
    "00": 0.5 / np.sqrt(_pi),
    "1": np.sqrt(3 / (4 * _pi)),
    "2a": 0.5 * np.sqrt(15 / _pi),
    "20": 0.25 * np.sqrt(5 / _pi),
    "22": 0.25 * np.sqrt(15 / _pi),
    "33": 0.25 * np.sqrt(35 / (2 * _pi)),
    "32": 0.5 * np.sqrt(105 / _pi),
    "31": 0.25 * np.sqrt(21 / (2 * _pi)),
    "30": 0.25 * np.sqrt(7 / _pi),
    "32b": 0.25 * np.sqrt(105 / _pi),
    "44": 0.75 * np.sqrt(35 / _pi),
    "43": 0.75 * np.sqrt(35 / (2 * _pi)),
    "42": 0.75 * np.sqrt(5 / _pi),
    "41": 0.75 * np.sqrt(5 / (2 * _pi)),
    "40": 3 / 16 * np.sqrt(1 / _pi),
    "42b": 3 / 8 * np.sqrt(5 / _pi),
    "44b": 3 / 16 * np.sqrt(35 / _pi),
}


def _mono(*terms):
    return [(c, tuple(p)) for c, p in terms]


_BASIS = [
    _mono((_C["00"], (0, 0, 0))),
    # l = 1
    _mono((_C["1"], (0, 1, 0))),
    _mono((_C["1"], (0, 0, 1))),
    _mono((_C["1"], (1, 0, 0))),
    # l = 2
    _mono((_C["2a"], (1, 1, 0))),
    _mono((_C["2a"], (0, 1, 1))),
    _mono((3 * _C["20"], (0, 0, 2)), (-_C["20"], (0, 0, 0))),
    _mono((_C["2a"], (1, 0, 1))),
    _mono((_C["22"], (2, 0, 0)), (-_C["22"], (0, 2, 0))),
    # l = 3
    _mono((3 * _C["33"], (2, 1, 0)), (-_C["33"], (0, 3, 0))),
    _mono((_C["32"], (1, 1, 1))),
    _mono((5 * _C["31"], (0, 1, 2)), (-_C["31"], (0, 1, 0))),
    _mono((5 * _C["30"], (0, 0, 3)), (-3 * _C["30"], (0, 0, 1))),
    _mono((5 * _C["31"], (1, 0, 2)), (-_C["31"], (1, 0, 0))),
    _mono((_C["32b"], (2, 0, 1)), (-_C["32b"], (0, 2, 1))),
    _mono((_C["33"], (3, 0, 0)), (-3 * _C["33"], (1, 2, 0))),
    # l = 4
    _mono((_C["44"], (3, 1, 0)), (-_C["44"], (1, 3, 0))),
    _mono((3 * _C["43"], (2, 1, 1)), (-_C["43"], (0, 3, 1))),
    _mono((7 * _C["42"], (1, 1, 2)), (-_C["42"], (1, 1, 0))),
    _mono((7 * _C["41"], (0, 1, 3)), (-3 * _C["41"], (0, 1, 1))),
    _mono((35 * _C["40"], (0, 0, 4)), (-30 * _C["40"], (0, 0, 2)), (3 * _C["40"], (0, 0, 0))),
    _mono((7 * _C["41"], (1, 0, 3)), (-3 * _C["41"], (1, 0, 1))),
    _mono((7 * _C["42b"], (2, 0, 2)), (-_C["42b"], (2, 0, 0)), (-7 * _C["42b"], (0, 2, 2)), (_C["42b"], (0, 2, 0))),
    _mono((_C["43"], (3, 0, 1)), (-3 * _C["43"], (1, 2, 1))),
    _mono((_C["44b"], (4, 0, 0)), (-6 * _C["44b"], (2, 2, 0)), (_C["44b"], (0, 4, 0))),
]

SH_BAND = np.concatenate([np.full(2 * l + 1, l) for l in range(MAX_ORDER + 1)])


def n_coeffs(order: int) -> int:
    return (order + 1) ** 2


def _powers(d):
    # pw[a][k] = d[:, k] ** a for a = 0..4
    pw = [np.ones_like(d)]
    for _ in range(4):
        pw.append(pw[-1] * d)
    return pw


def sh_basis(dirs, order: int = MAX_ORDER) -> np.ndarray:
    """Y_lm at unit directions (n, 3) -> (n, (order+1)^2), index l*l + l + m."""
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in [0, {MAX_ORDER}]")
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    pw = _powers(d)
    out = np.zeros((d.shape[0], n_coeffs(order)))
    for i, terms in enumerate(_BASIS[:n_coeffs(order)]):
        for c, (a, b, e) in terms:
            out[:, i] += c * pw[a][:, 0] * pw[b][:, 1] * pw[e][:, 2]
    return out


def sh_basis_grad(dirs, order: int = MAX_ORDER):
    """Values (n, k) and gradients (n, k, 3) of the polynomial extension of Y_lm."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    pw = _powers(d)
    k = n_coeffs(order)
    val = np.zeros((d.shape[0], k))
    grad = np.zeros((d.shape[0], k, 3))
    for i, terms in enumerate(_BASIS[:k]):
        for c, (a, b, e) in terms:
            px, py, pz = pw[a][:, 0], pw[b][:, 1], pw[e][:, 2]
            val[:, i] += c * px * py * pz
            if a:
                grad[:, i, 0] += c * a * pw[a - 1][:, 0] * py * pz
            if b:
                grad[:, i, 1] += c * b * px * pw[b - 1][:, 1] * pz
            if e:
                grad[:, i, 2] += c * e * px * py * pw[e - 1][:, 2]
    return val, grad


def sphere_quadrature(n: int = 24):
    """Gauss-Legendre in z times uniform azimuth; exact for polynomials of degree < 2n on the sphere."""
    z, wz = np.polynomial.legendre.leggauss(n)
    phi = (np.arange(2 * n) + 0.5) * np.pi / n
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    r = np.sqrt(1 - zz ** 2)
    dirs = np.stack([r * np.cos(pp), r * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    w = np.repeat(wz, 2 * n) * (np.pi / n)
    return dirs, w


def project_environment(radiance_fn, order: int = MAX_ORDER, n: int = 32) -> np.ndarray:
    """SH coefficients (channels, k) of ``radiance_fn(dirs) -> (m, channels)``."""
    dirs, w = sphere_quadrature(n)
    vals = np.asarray(radiance_fn(dirs), dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    Y = sh_basis(dirs, order)
    return (vals * w[:, None]).T @ Y
