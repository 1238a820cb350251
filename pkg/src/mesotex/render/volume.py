"""Shell-restricted ray sampling and emission-absorption compositing with its backward pass."""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np


class RaySamplePlan(NamedTuple):
    t: np.ndarray      # (R, S) sample positions, strictly increasing per ray
    delta: np.ndarray  # (R, S) interval lengths
    hit: np.ndarray    # (R,) ray touches the shell
    s_max: float

    @property
    def n_samples(self) -> int:
        return self.t.shape[1]

    def points(self, origins, dirs) -> np.ndarray:
        return origins[:, None, :] + self.t[..., None] * dirs[:, None, :]


def make_sample_plan(t_in, t_out, n_samples: int, s_max: float,
                     rng: Optional[np.random.Generator] = None) -> RaySamplePlan:
    """Uniform (midpoint or jittered-stratified) samples over [t_in, t_out]; missed rays get a dummy grid."""
    t_in = np.asarray(t_in, dtype=np.float64)
    t_out = np.asarray(t_out, dtype=np.float64)
    hit = np.isfinite(t_in) & np.isfinite(t_out) & (t_out > t_in)
    a = np.where(hit, t_in, 0.0)
    length = np.where(hit, np.where(hit, t_out, 1.0) - a, 1.0)
    if rng is None:
        u = (np.arange(n_samples) + 0.5)[None, :] / n_samples
    else:
        u = (np.arange(n_samples)[None, :] + rng.uniform(size=(len(a), n_samples))) / n_samples
    t = a[:, None] + u * length[:, None]
    delta = np.broadcast_to(length[:, None] / n_samples, t.shape).copy()
    return RaySamplePlan(t, delta, hit, float(s_max))


class CompositeCache(NamedTuple):
    sigma: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    trans: np.ndarray   # T_i (before sample i)
    weights: np.ndarray
    color: np.ndarray
    background: np.ndarray


def volume_render(sigma, color, t, delta, background=(0.0, 0.0, 0.0), eps: float = 1e-10):
    """Composite (R, S) densities and (R, S, 3) colors; returns rgb (R,3), depth (R,), weights (R,S), cache."""
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    tau = sigma * delta
    alpha = -np.expm1(-tau)
    # exclusive cumulative optical depth
    acc = np.cumsum(tau, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((tau.shape[0], 1)), acc[:, :-1]], axis=1))
    w = trans * alpha
    wsum = w.sum(axis=1)
    rgb = np.einsum("rs,rsc->rc", w, color) + (1.0 - wsum)[:, None] * bg
    depth = np.sum(w * t, axis=1) / np.maximum(wsum, eps)
    return rgb, depth, w, CompositeCache(sigma, delta, alpha, trans, w, color, bg)


def volume_render_backward(cache: CompositeCache, grad_rgb, grad_weights=None):
    """dL/dsigma (R,S) and dL/dcolor (R,S,3) given dL/drgb and optionally direct dL/dw."""
    w = cache.weights
    G = np.einsum("rc,rsc->rs", grad_rgb, cache.color - cache.background[None, None, :])
    if grad_weights is not None:
        G = G + grad_weights
    gw = G * w
    # suffix sums over i > k
    after = np.cumsum(gw[:, ::-1], axis=1)[:, ::-1] - gw
    t_next = cache.trans * (1.0 - cache.alpha)
    g_sigma = cache.delta * (G * t_next - after)
    g_color = w[..., None] * grad_rgb[:, None, :]
    return g_sigma, g_color
