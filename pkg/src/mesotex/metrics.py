"""Image and feature-space statistics."""

from __future__ import annotations

import numpy as np

PSNR_IDENTICAL = 99.0  # reported when the images match exactly


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val: float = 1.0) -> float:
    m = mse(a, b)
    if m == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(max_val ** 2 / m))


def seam_discontinuity(features, provenance, channels=None) -> float:
    """Mean squared feature jump across 4-neighbour texel pairs whose source patches differ."""
    F = np.asarray(features, dtype=np.float64)
    if channels is not None:
        F = F[..., channels]
    P = np.asarray(provenance)
    diffs = []
    for axis in (0, 1):
        a = np.take(F, np.arange(F.shape[axis] - 1), axis=axis)
        b = np.take(F, np.arange(1, F.shape[axis]), axis=axis)
        pa = np.take(P, np.arange(P.shape[axis] - 1), axis=axis)
        pb = np.take(P, np.arange(1, P.shape[axis]), axis=axis)
        cross = pa != pb
        if cross.any():
            diffs.append(np.sum((a - b) ** 2, axis=-1)[cross])
    if not diffs:
        return 0.0
    return float(np.mean(np.concatenate(diffs)))


def within_cluster_variance_ratio(features, n_clusters: int, seed: int = 0) -> float:
    """k-means within-cluster sum of squares over total sum of squares (scale free, lower is more compact)."""
    from sklearn.cluster import KMeans

    X = np.asarray(features, dtype=np.float64)
    total = np.sum((X - X.mean(axis=0)) ** 2)
    if total == 0.0:
        return 0.0
    km = KMeans(n_clusters=min(n_clusters, len(X)), n_init=3, random_state=seed).fit(X)
    return float(km.inertia_ / total)


def per_level_variance_ratio(features, levels: int, n_clusters: int, seed: int = 0) -> float:
    """Mean over hash-grid levels of :func:`within_cluster_variance_ratio` on that level's features."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[1] % levels:
        raise ValueError("feature width must be a multiple of the level count")
    F = X.shape[1] // levels
    return float(np.mean([within_cluster_variance_ratio(X[:, l * F:(l + 1) * F], n_clusters, seed)
                          for l in range(levels)]))
