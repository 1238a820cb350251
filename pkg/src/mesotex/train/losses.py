"""Reconstruction, distortion, normal and clustering losses with their gradients."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

NORMAL_CLAMP = np.pi / 8


def loss_rec(pred, gt):
    """Mean absolute error and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and target must have the same shape")
    diff = pred - gt
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def loss_distortion(w, t, delta):
    """Per-ray sum_ij w_i w_j |t_i - t_j| + 1/3 sum_i w_i^2 delta_i, averaged over rays; O(n) per ray.

    Returns (loss, dL/dw).
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    delta = np.atleast_2d(np.asarray(delta, dtype=np.float64))
    R = w.shape[0]
    # with t sorted: sum_ij w_i w_j |t_i - t_j| = 2 sum_i w_i (t_i W_<i - S_<i)
    W_ex = np.cumsum(w, axis=1) - w
    S_ex = np.cumsum(w * t, axis=1) - w * t
    bi = 2.0 * np.sum(w * (t * W_ex - S_ex), axis=1)
    uni = np.sum(w * w * delta, axis=1) / 3.0
    loss = float(np.mean(bi + uni))
    # d/dw_k of sum_ij w_i w_j |t_i - t_j| = 2 sum_j w_j |t_k - t_j|
    Wtot = w.sum(axis=1, keepdims=True)
    Stot = np.sum(w * t, axis=1, keepdims=True)
    W_in = W_ex + w
    S_in = S_ex + w * t
    near = t * W_ex - S_ex                      # j < k
    far = (Stot - S_in) - t * (Wtot - W_in)     # j > k
    grad = (2.0 * (near + far) + 2.0 * w * delta / 3.0) / R
    return loss, grad


def loss_distortion_reference(w, t, delta):
    """O(n^2) double sum for one ray."""
    w, t, delta = (np.asarray(a, dtype=np.float64) for a in (w, t, delta))
    return float(np.sum(w[:, None] * w[None, :] * np.abs(t[:, None] - t[None, :])) + np.sum(w * w * delta) / 3.0)


def loss_normal(target, n_f, clamp: str = "min"):
    """Relaxed cosine between the unit target direction (-grad sigma) and n_f.

    ``clamp="min"`` evaluates -cos(min(angle, pi/8)); ``"max"`` the alternative -cos(max(angle, pi/8)).
    Zero-length targets are skipped. Returns (loss, dL/dn_f, supervised mask); targets get no gradient.
    """
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    n_f = np.atleast_2d(np.asarray(n_f, dtype=np.float64))
    tn = np.linalg.norm(target, axis=1)
    nn = np.linalg.norm(n_f, axis=1)
    ok = (tn > 1e-12) & (nn > 1e-12)
    grad = np.zeros_like(n_f)
    if not ok.any():
        return 0.0, grad, ok
    a = target[ok] / tn[ok, None]
    b = n_f[ok] / nn[ok, None]
    cos = np.clip(np.sum(a * b, axis=1), -1.0, 1.0)
    ang = np.arccos(cos)
    if clamp == "min":
        free = ang < NORMAL_CLAMP
        val = -np.cos(np.minimum(ang, NORMAL_CLAMP))
    elif clamp == "max":
        free = ang > NORMAL_CLAMP
        val = -np.cos(np.maximum(ang, NORMAL_CLAMP))
    else:
        raise ValueError("clamp must be 'min' or 'max'")
    m = ok.sum()
    # d(-a.b)/dn with b = n/|n|
    g = -(a - cos[:, None] * b) / nn[ok, None] / m
    grad[ok] = np.where(free[:, None], g, 0.0)
    return float(np.mean(val)), grad, ok


class ClusterResult(NamedTuple):
    loss: float
    grad_f: np.ndarray   # (n, d)
    grad_mu: np.ndarray  # (J, d)
    q: np.ndarray
    p: np.ndarray


def soft_assignment(f, mu, kappa: float = 1.0):
    """Student-t kernel q_ij, row-normalized; coincident points give kernel value 1."""
    d2 = np.sum((f[:, None, :] - mu[None, :, :]) ** 2, axis=-1)
    k = (1.0 + d2 / kappa) ** (-(kappa + 1.0) / 2.0)
    return k / k.sum(axis=1, keepdims=True), d2


def target_distribution(q):
    """p_ij = (q_ij^2 / sum_i q_ij) normalized over j."""
    w = q ** 2 / q.sum(axis=0, keepdims=True)
    return w / w.sum(axis=1, keepdims=True)


def cluster_loss(f, mu, kappa: float = 1.0, p=None) -> ClusterResult:
    """KL(P || Q) summed over features; P is held constant (pass ``p`` to freeze it explicitly)."""
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    if len(f) < 1 or len(mu) < 1:
        raise ValueError("need at least one feature and one center")
    q, d2 = soft_assignment(f, mu, kappa)
    if p is None:
        p = target_distribution(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    loss = max(float(terms.sum()), 0.0)  # KL is non-negative; drop roundoff below zero
    coef = (kappa + 1.0) / kappa * (p - q) / (1.0 + d2 / kappa)  # (n, J)
    diff = f[:, None, :] - mu[None, :, :]
    g_f = np.einsum("nj,njd->nd", coef, diff)
    g_mu = -np.einsum("nj,njd->jd", coef, diff)
    return ClusterResult(loss, g_f, g_mu, q, p)


def cluster_losses(features, centers, levels: int, kappa: float = 1.0, frozen_p=None):
    """Sum of per-level cluster losses; ``features`` (n, L*F), ``centers`` (L, J, F)."""
    n = features.shape[0]
    F = features.shape[1] // levels
    total = 0.0
    g_f = np.zeros_like(features)
    g_mu = np.zeros_like(centers)
    ps = []
    for l in range(levels):
        fl = features[:, l * F:(l + 1) * F]
        res = cluster_loss(fl, centers[l], kappa, None if frozen_p is None else frozen_p[l])
        total += res.loss
        g_f[:, l * F:(l + 1) * F] = res.grad_f
        g_mu[l] = res.grad_mu
        ps.append(res.p)
    return total, g_f, g_mu, ps
