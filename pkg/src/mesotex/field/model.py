"""Latent texture field: two hash grids feeding a two-headed decoder."""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .._validation import check_points
from .decoder import Decoder, DecoderConfig, FieldOutputs
from .hashgrid import HashGrid, HashGridConfig

DEFAULT_FHAT_GRID = HashGridConfig(levels=4)


class FieldCache(NamedTuple):
    enc_f: object
    enc_fhat: object
    dec: object
    f: np.ndarray
    f_hat: np.ndarray


class LatentField:
    """Features are looked up at the projected base-surface point, normalized to the unit cube of ``bounds``.

    ``f`` drives density and shading attributes (including theta), ``f_hat`` drives only phi.
    """

    def __init__(self, bounds, grid: HashGridConfig = HashGridConfig(),
                 grid_hat: HashGridConfig = DEFAULT_FHAT_GRID, decoder: DecoderConfig = DecoderConfig(),
                 rng: Optional[np.random.Generator] = None, dtype=np.float64, zero_output: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("bounds must be two 3-vectors with hi > lo")
        self.lo, self.hi = lo, hi
        self.dtype = np.dtype(dtype)
        self.grid_f = HashGrid(grid, rng, dtype)
        self.grid_fhat = HashGrid(grid_hat, rng, dtype)
        self.decoder = Decoder(grid.output_dim, grid_hat.output_dim, decoder, rng, dtype, zero_output)

    @property
    def scale(self) -> np.ndarray:
        return 1.0 / (self.hi - self.lo)

    def normalize(self, x):
        return (check_points(x, "x") - self.lo) * self.scale

    def features(self, x_c):
        p = self.normalize(x_c)
        f, _ = self.grid_f.encode(p, need_cache=False)
        fh, _ = self.grid_fhat.encode(p, need_cache=False)
        return f, fh

    def forward(self, x_c, s):
        p = self.normalize(x_c)
        f, ef = self.grid_f.encode(p)
        fh, efh = self.grid_fhat.encode(p)
        out, dc = self.decoder.decode(f, fh, s)
        return out, FieldCache(ef, efh, dc, f, fh)

    def __call__(self, x_c, s) -> FieldOutputs:
        return self.forward(x_c, s)[0]

    def backward(self, cache: FieldCache, grads: dict, need_grad_x: bool = False, grad_f_extra=None):
        """Accumulate parameter gradients; returns (dL/dx_c or None, dL/ds).

        ``grad_f_extra`` is an optional (dL/df, dL/df_hat) pair from losses acting on the features directly.
        """
        g_f, g_fh, g_s = self.decoder.backward(cache.dec, grads)
        if grad_f_extra is not None:
            g_f = g_f + grad_f_extra[0]
            g_fh = g_fh + grad_f_extra[1]
        gp1 = self.grid_f.backward(cache.enc_f, g_f, need_grad_p=need_grad_x)
        gp2 = self.grid_fhat.backward(cache.enc_fhat, g_fh, need_grad_p=need_grad_x)
        if not need_grad_x:
            return None, g_s
        return (gp1 + gp2) * self.scale, g_s

    def named_parameters(self):
        yield "grid_f", self.grid_f.tables, self.grid_f.grad
        yield "grid_fhat", self.grid_fhat.tables, self.grid_fhat.grad
        yield from self.decoder.named_parameters()

    def parameters(self) -> dict:
        return {n: p for n, p, _ in self.named_parameters()}

    def gradients(self) -> dict:
        return {n: g for n, _, g in self.named_parameters()}

    def zero_grad(self):
        self.grid_f.zero_grad()
        self.grid_fhat.zero_grad()
        self.decoder.zero_grad()

    def config_dict(self) -> dict:
        return {
            "bounds": [self.lo.tolist(), self.hi.tolist()],
            "grid": self.grid_f.config.to_dict(),
            "grid_hat": self.grid_fhat.config.to_dict(),
            "decoder": self.decoder.config.to_dict(),
        }

    @classmethod
    def from_config_dict(cls, d: dict, dtype=np.float64) -> "LatentField":
        return cls(d["bounds"], HashGridConfig(**d["grid"]), HashGridConfig(**d["grid_hat"]),
                   DecoderConfig(**d["decoder"]), dtype=dtype)
