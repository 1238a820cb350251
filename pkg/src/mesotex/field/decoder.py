"""Two-headed attribute decoder with hand-written backward passes."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .fourier import fourier_embed, fourier_embed_grad

HEAD_A_OUTPUTS = 7  # sigma, k_d (3), k_s, g, theta
HEAD_B_OUTPUTS = 2  # unnormalized (cos phi, sin phi)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)


class MLP:
    """ReLU network: ``sizes = [in, h1, ..., out]``, linear output layer."""

    def __init__(self, sizes, rng: np.random.Generator, dtype=np.float64, zero_output: bool = False,
                 output_scale: float = 0.1):
        self.sizes = list(sizes)
        self.weights, self.biases = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            bound = np.sqrt(6.0 / a) * (output_scale if last else 1.0)
            W = np.zeros((a, b)) if (last and zero_output) else rng.uniform(-bound, bound, (a, b))
            self.weights.append(W.astype(dtype))
            self.biases.append(np.zeros(b, dtype=dtype))
        self.zero_grad()

    def zero_grad(self):
        self.grad_w = [np.zeros_like(W) for W in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]

    def forward(self, x):
        acts = [x]
        h = x
        n = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < n - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, g):
        n = len(self.weights)
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                g = g * (acts[i + 1] > 0)
            self.grad_w[i] += acts[i].T @ g
            self.grad_b[i] += g.sum(axis=0)
            g = g @ self.weights[i].T
        return g

    def named_parameters(self, prefix: str):
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.w{i}", W, self.grad_w[i]
            yield f"{prefix}.b{i}", b, self.grad_b[i]


@dataclass(frozen=True)
class DecoderConfig:
    hidden: int = 64
    depth: int = 3
    fourier_m: int = 4
    sdf_scale: float = 1.0      # s is divided by this before embedding
    density_scale: float = 1.0  # sigma = density_scale * softplus(raw)

    def to_dict(self):
        return asdict(self)


class FieldOutputs(NamedTuple):
    sigma: np.ndarray
    k_d: np.ndarray
    k_s: np.ndarray
    g: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    phi_vec: np.ndarray  # (cos phi, sin phi)


class DecodeCache(NamedTuple):
    raw_a: np.ndarray
    raw_b: np.ndarray
    acts_a: list
    acts_b: list
    s_in: np.ndarray
    norm_b: np.ndarray


class Decoder:
    def __init__(self, dim_f: int, dim_fhat: int, config: DecoderConfig = DecoderConfig(),
                 rng: Optional[np.random.Generator] = None, dtype=np.float64, zero_output: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.dim_f, self.dim_fhat = dim_f, dim_fhat
        e = 2 * config.fourier_m + 1
        hid = [config.hidden] * config.depth
        self.head_a = MLP([dim_f + e] + hid + [HEAD_A_OUTPUTS], rng, dtype, zero_output)
        self.head_b = MLP([dim_fhat + e] + hid + [HEAD_B_OUTPUTS], rng, dtype, zero_output)
        self.dtype = np.dtype(dtype)

    def named_parameters(self):
        yield from self.head_a.named_parameters("dec.a")
        yield from self.head_b.named_parameters("dec.b")

    def zero_grad(self):
        self.head_a.zero_grad()
        self.head_b.zero_grad()

    def _check(self, f, f_hat, s):
        f = np.asarray(f, dtype=self.dtype)
        f_hat = np.asarray(f_hat, dtype=self.dtype)
        s = np.asarray(s, dtype=self.dtype).reshape(-1)
        if f.ndim != 2 or f.shape[1] != self.dim_f:
            raise ValueError(f"f must have shape (n, {self.dim_f}), got {f.shape}")
        if f_hat.ndim != 2 or f_hat.shape[1] != self.dim_fhat:
            raise ValueError(f"f_hat must have shape (n, {self.dim_fhat}), got {f_hat.shape}")
        if not (len(f) == len(f_hat) == len(s)):
            raise ValueError("f, f_hat and s must have the same length")
        return f, f_hat, s

    def density(self, f, s):
        """Only the density branch; used for finite-difference density gradients."""
        cfg = self.config
        emb = fourier_embed(np.asarray(s).reshape(-1) / cfg.sdf_scale, cfg.fourier_m).astype(self.dtype)
        raw, _ = self.head_a.forward(np.concatenate([f, emb], axis=1))
        return cfg.density_scale * softplus(raw[:, 0])

    def decode(self, f, f_hat, s):
        f, f_hat, s = self._check(f, f_hat, s)
        cfg = self.config
        s_in = s / cfg.sdf_scale
        emb = fourier_embed(s_in, cfg.fourier_m).astype(self.dtype)
        raw_a, acts_a = self.head_a.forward(np.concatenate([f, emb], axis=1))
        raw_b, acts_b = self.head_b.forward(np.concatenate([f_hat, emb], axis=1))
        sigma = cfg.density_scale * softplus(raw_a[:, 0])
        k_d = sigmoid(raw_a[:, 1:4])
        k_s = sigmoid(raw_a[:, 4])
        g = softplus(raw_a[:, 5]) + 1.0
        theta = np.pi * sigmoid(raw_a[:, 6])
        nb = np.linalg.norm(raw_b, axis=1)
        degenerate = nb < 1e-12
        vec = np.where(degenerate[:, None], np.array([1.0, 0.0], dtype=self.dtype),
                       raw_b / np.where(degenerate, 1.0, nb)[:, None])
        phi = np.mod(np.arctan2(vec[:, 1], vec[:, 0]), 2 * np.pi)
        out = FieldOutputs(sigma, k_d, k_s, g, theta, phi, vec)
        return out, DecodeCache(raw_a, raw_b, acts_a, acts_b, s_in, nb)

    def backward(self, cache: DecodeCache, grads: dict):
        """``grads`` maps output names (sigma, k_d, k_s, g, theta, phi_vec) to dL/d(output).

        Returns dL/df, dL/df_hat and dL/ds.
        """
        cfg = self.config
        ra, rb = cache.raw_a, cache.raw_b
        n = len(ra)
        ga = np.zeros_like(ra)
        if "sigma" in grads:
            ga[:, 0] = grads["sigma"] * cfg.density_scale * sigmoid(ra[:, 0])
        if "k_d" in grads:
            sg = sigmoid(ra[:, 1:4])
            ga[:, 1:4] = grads["k_d"] * sg * (1 - sg)
        if "k_s" in grads:
            sg = sigmoid(ra[:, 4])
            ga[:, 4] = grads["k_s"] * sg * (1 - sg)
        if "g" in grads:
            ga[:, 5] = grads["g"] * sigmoid(ra[:, 5])
        if "theta" in grads:
            sg = sigmoid(ra[:, 6])
            ga[:, 6] = grads["theta"] * np.pi * sg * (1 - sg)
        gb = np.zeros_like(rb)
        if "phi_vec" in grads:
            nb = cache.norm_b
            ok = nb >= 1e-12
            vhat = rb / np.where(ok, nb, 1.0)[:, None]
            gv = grads["phi_vec"]
            proj = gv - np.sum(gv * vhat, axis=1, keepdims=True) * vhat
            gb = np.where(ok[:, None], proj / np.where(ok, nb, 1.0)[:, None], 0.0)
        gin_a = self.head_a.backward(cache.acts_a, ga)
        gin_b = self.head_b.backward(cache.acts_b, gb)
        m = cfg.fourier_m
        demb = fourier_embed_grad(cache.s_in, m)
        g_emb = gin_a[:, self.dim_f:] + gin_b[:, self.dim_fhat:]
        g_s = np.sum(g_emb * demb, axis=1) / cfg.sdf_scale
        return gin_a[:, :self.dim_f], gin_b[:, :self.dim_fhat], g_s.reshape(n)
