"""Estimator-style wrappers (fit / predict / transform / score) over the functional API.

``NeuralTextureField`` fits a latent texture to a capture; ``PatchQuilter`` fits a patch library
to a fitted field and samples new textures from it.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_is_fitted, check_points
from .metrics import psnr
from .render.camera import Camera
from .render.pipeline import RenderSettings, project_samples, render_capture_view
from .synthesis.library import K_CANDIDATES, TAU, PatchLibrary, build_library
from .synthesis.quilting import synthesize_planar
from .synthesis.surface import interpolate_vector_field, synthesize_on_surface
from .train.config import ModelConfig, TrainConfig
from .train.trainer import CaptureData, Trainer
from ._rng import make_rng


def _capture(X) -> CaptureData:
    if isinstance(X, CaptureData):
        return X
    if all(hasattr(X, a) for a in ("mesh", "cameras", "images", "heldout", "s_max")):
        return CaptureData.from_scene(X)
    raise TypeError("expected a CaptureData or a synthetic scene")


class NeuralTextureField(BaseEstimator):
    """Latent meso-structure field trained on posed images of a base mesh.

    ``fit`` takes a capture (``CaptureData`` or a synthetic scene), ``predict`` renders cameras,
    ``transform`` returns latent features (f, f_hat concatenated) at surface points, and ``score``
    is the mean held-out PSNR.
    """

    def __init__(self, iterations: int = 3000, rays_per_batch: int = 512, n_samples: int = 32, lr: float = 1e-2,
                 lr_final: float = 1e-3, lambda_clu: float = 1e-5, lambda_dis: float = 1e-2,
                 lambda_nor: float = 1.0, clusters: int = 64, model: Optional[ModelConfig] = None, seed: int = 0):
        self.iterations = iterations
        self.rays_per_batch = rays_per_batch
        self.n_samples = n_samples
        self.lr = lr
        self.lr_final = lr_final
        self.lambda_clu = lambda_clu
        self.lambda_dis = lambda_dis
        self.lambda_nor = lambda_nor
        self.clusters = clusters
        self.model = model
        self.seed = seed

    def _config(self) -> TrainConfig:
        kw = {k: v for k, v in self.get_params().items() if k != "model"}
        return TrainConfig(model=self.model if self.model is not None else ModelConfig(), **kw)

    def fit(self, X, y=None, progress: bool = False):
        data = _capture(X)
        self.trainer_ = Trainer(data, self._config())
        self.metrics_ = self.trainer_.fit(progress=progress)
        self.field_ = self.trainer_.field
        self.mesh_ = data.mesh
        return self

    def capture_model(self):
        check_is_fitted(self, ["trainer_"])
        return self.trainer_.model()

    def predict(self, X):
        """Render one camera or a list of cameras; returns (H, W, 3) or (n, H, W, 3)."""
        model = self.capture_model()
        settings = RenderSettings(self.n_samples, self.trainer_.data.s_max, self.trainer_.config.background)
        cams = [X] if isinstance(X, Camera) else list(X)
        out = np.stack([render_capture_view(c, model, settings)[0] for c in cams])
        return out[0] if isinstance(X, Camera) else out

    def transform(self, X):
        """Latent features at the base-mesh footpoints of points ``X`` (n, 3)."""
        check_is_fitted(self, ["field_"])
        x = check_points(X, "X")
        geom = project_samples(self.trainer_.projector, x, np.zeros((1, 3)), self.trainer_.data.s_max)
        f, fh = self.field_.features(geom.x_c)
        return np.concatenate([f, fh], axis=1)

    def score(self, X, y=None) -> float:
        data = _capture(X)
        views = data.heldout if data.heldout else list(range(len(data.cameras)))
        imgs = self.predict([data.cameras[v] for v in views])
        return float(np.mean([psnr(a, data.images[v]) for a, v in zip(imgs, views)]))


class PatchQuilter(BaseEstimator):
    """Implicit-patch library extracted from a fitted field, sampled by quilting.

    ``fit`` accepts a fitted :class:`NeuralTextureField`, a ``(mesh, field)`` pair, or a ready
    :class:`PatchLibrary`.
    """

    def __init__(self, patch_size: int = 128, n_samples: int = 8000, world_size: Optional[float] = None,
                 overlap: Optional[int] = None, temperature: float = TAU, candidates: int = K_CANDIDATES,
                 mode: str = "matched", seed: int = 0):
        self.patch_size = patch_size
        self.n_samples = n_samples
        self.world_size = world_size
        self.overlap = overlap
        self.temperature = temperature
        self.candidates = candidates
        self.mode = mode
        self.seed = seed

    def fit(self, X, y=None):
        if isinstance(X, PatchLibrary):
            self.library_, self.report_ = X, None
            return self
        if isinstance(X, NeuralTextureField):
            check_is_fitted(X, ["field_"])
            mesh, field = X.mesh_, X.field_
        else:
            mesh, field = X
        self.library_, self.report_ = build_library(mesh, field, self.n_samples, self.patch_size, self.world_size,
                                                    self.overlap, make_rng(self.seed, "poisson"))
        return self

    def sample(self, height: int, width: int, seed: Optional[int] = None):
        """Planar texture of the requested size."""
        check_is_fitted(self, ["library_"])
        return synthesize_planar(self.library_, height, width, self.seed if seed is None else seed,
                                 self.temperature, self.candidates, self.mode)

    def sample_on(self, mesh, controls, resolution=(512, 512), world_size: Optional[float] = None,
                  seed: Optional[int] = None, blend: str = "min_cut"):
        """Texture grown over a UV-mapped target; ``controls`` are (vertex, tangent) pairs."""
        check_is_fitted(self, ["library_"])
        vf = interpolate_vector_field(mesh, controls)
        return synthesize_on_surface(mesh, self.library_, vf, self.seed if seed is None else seed, resolution,
                                     world_size, blend)


__all__ = ["NeuralTextureField", "PatchQuilter"]
