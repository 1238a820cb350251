"""Input validation helpers shared by the estimators and the functional API."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


class NotFittedError(ValueError, AttributeError):
    """Raised when an estimator is used before ``fit``."""


class ProjectionFailure(RuntimeError):
    """A query point could not be projected onto the base mesh."""


class MesotexWarning(UserWarning):
    """Non-fatal condition that the caller may want to inspect (truncation, fallback, rejection)."""


def check_array(x, shape: Optional[Sequence[Optional[int]]] = None, dtype=np.float64,
                name: str = "array", allow_nonfinite: bool = False) -> np.ndarray:
    """Convert to a C-contiguous ndarray and check its shape; ``None`` in ``shape`` matches any size."""
    a = np.ascontiguousarray(x, dtype=dtype)
    if shape is not None:
        if a.ndim != len(shape) or any(s is not None and s != d for s, d in zip(shape, a.shape)):
            raise ValueError(f"{name} must have shape {tuple(shape)}, got {a.shape}")
    if not allow_nonfinite and np.issubdtype(a.dtype, np.floating) and not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_points(x, name: str = "points") -> np.ndarray:
    """Accept a single 3-vector or an (n, 3) batch; always returns (n, 3)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    return check_array(a, shape=(None, 3), name=name)


def check_unit_vectors(x, tol: float = 1e-6, name: str = "directions") -> np.ndarray:
    a = check_points(x, name=name)
    n = np.linalg.norm(a, axis=1)
    if np.any(np.abs(n - 1.0) > tol):
        raise ValueError(f"{name} must be unit length (tolerance {tol})")
    return a


def check_positive(value: float, name: str) -> float:
    v = float(value)
    if not np.isfinite(v) or v <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return v


def check_is_fitted(estimator, attributes: Sequence[str]) -> None:
    if not all(getattr(estimator, a, None) is not None for a in attributes):
        raise NotFittedError(f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first.")
