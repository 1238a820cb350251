"""Adam with bias correction over named numpy tensors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .._validation import MesotexWarning


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> list[str]:
    """In-place update of every tensor in ``params``; returns names skipped for non-finite gradients."""
    skipped = []
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            skipped.append(name)
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.step[name] = 0
        m, v = state.m[name], state.v[name]
        state.step[name] += 1
        t = state.step[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    if skipped:
        warnings.warn(f"skipped Adam update for non-finite gradients: {skipped}", MesotexWarning)
    return skipped
