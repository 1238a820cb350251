"""Training and model configuration, loaded from strict JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..field.decoder import DecoderConfig
from ..field.hashgrid import HashGridConfig
from ..field.model import DEFAULT_FHAT_GRID


@dataclass(frozen=True)
class ModelConfig:
    grid: HashGridConfig = HashGridConfig()
    grid_hat: HashGridConfig = DEFAULT_FHAT_GRID
    decoder: DecoderConfig = DecoderConfig(density_scale=1000.0)

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "grid_hat": self.grid_hat.to_dict(), "decoder": self.decoder.to_dict()}


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    rays_per_batch: int = 512
    n_samples: int = 32
    lr: float = 1e-2
    lr_final: float = 1e-3        # exponential decay target at the last iteration
    lambda_clu: float = 1e-5
    lambda_dis: float = 1e-2
    lambda_nor: float = 1.0
    kappa: float = 1.0
    clusters: int = 64
    fd_step: float | None = None  # density finite-difference step; default half the finest grid cell
    normal_samples: int = 256
    normal_clamp: str = "min"
    cluster_samples: int = 1024
    eval_every: int = 1000
    log_every: int = 100
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    deterministic: bool = True
    model: ModelConfig = ModelConfig()

    def __post_init__(self):
        if min(self.lambda_clu, self.lambda_dis, self.lambda_nor) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.normal_clamp not in ("min", "max"):
            raise ValueError("normal_clamp must be 'min' or 'max'")
        if self.iterations < 0 or self.rays_per_batch < 1 or self.n_samples < 1:
            raise ValueError("iterations >= 0, rays_per_batch >= 1 and n_samples >= 1 required")

    def to_dict(self):
        d = asdict(self)
        d["background"] = list(self.background)
        return d


_NESTED = {"grid": HashGridConfig, "grid_hat": HashGridConfig, "decoder": DecoderConfig}


def _strict(cls, d: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    _strict(ModelConfig, d, "model")
    kw = {k: _NESTED[k](**_strict(_NESTED[k], v, f"model.{k}")) for k, v in d.items()}
    return ModelConfig(**kw)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(_strict(TrainConfig, d, "train config"))
    if "model" in d:
        d["model"] = model_config_from_dict(d["model"])
    if "background" in d:
        d["background"] = tuple(d["background"])
    return TrainConfig(**d)


def load_train_config(path) -> TrainConfig:
    return train_config_from_dict(json.loads(Path(path).read_text()))
