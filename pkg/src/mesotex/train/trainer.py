"""Training loop for latent texture fields on posed multi-view images."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .._rng import make_rng
from ..field.checkpoint import load_field, save_field
from ..field.model import LatentField
from ..field.optim import AdamState, adam_step
from ..geometry.bvh import shell_intervals
from ..geometry.projection import BaseProjector
from ..metrics import psnr
from ..render.camera import generate_rays
from ..render.pipeline import (CaptureModel, RenderSettings, SampleGeometry, backward_samples, evaluate_samples,
                               project_samples, render_capture_view)
from ..render.volume import make_sample_plan, volume_render, volume_render_backward
from ..shading.lighting import SHLighting
from ..shading.sh import n_coeffs
from .config import TrainConfig
from .losses import cluster_losses, loss_distortion, loss_normal, loss_rec

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["iteration", "L_rec", "L_clu", "L_dis", "L_nor", "heldout_PSNR"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class CaptureData:
    """Base mesh, cameras and images of one capture; ``heldout`` views are excluded from training."""

    mesh: object
    cameras: list
    images: np.ndarray
    heldout: list
    s_max: float

    @classmethod
    def from_scene(cls, scene) -> "CaptureData":
        return cls(scene.mesh, scene.cameras, scene.images, list(scene.heldout), scene.s_max)

    @property
    def train_ids(self):
        return [i for i in range(len(self.cameras)) if i not in self.heldout]


class RayPool:
    """Shell-hitting training rays with their fixed samples already projected onto the base mesh."""

    def __init__(self, projector: BaseProjector, cameras, images, s_max: float, n_samples: int,
                 rng: np.random.Generator, chunk: int = 4096):
        origins, dirs, gts = [], [], []
        for cam, img in zip(cameras, images):
            o, d = generate_rays(cam)
            origins.append(o)
            dirs.append(d)
            gts.append(img.reshape(-1, 3))
        o = np.concatenate(origins)
        d = np.concatenate(dirs)
        gt = np.concatenate(gts)
        t_in, t_out = shell_intervals(projector.bvh, projector.mesh, o, d, s_max)
        plan = make_sample_plan(t_in, t_out, n_samples, s_max, rng=rng)
        keep = np.flatnonzero(plan.hit)
        self.n_total = len(o)
        self.dirs = d[keep]
        self.gt = gt[keep]
        self.t = plan.t[keep]
        self.delta = plan.delta[keep]
        N, S = self.t.shape
        self.x = np.empty((N, S, 3), np.float32)
        self.x_c = np.empty((N, S, 3), np.float32)
        self.n_c = np.empty((N, S, 3), np.float32)
        self.s = np.empty((N, S), np.float32)
        self.face = np.empty((N, S), np.int32)
        self.ok = np.empty((N, S), bool)
        for a in range(0, N, chunk):
            b = min(N, a + chunk)
            x = o[keep[a:b], None, :] + self.t[a:b, :, None] * self.dirs[a:b, None, :]
            g = project_samples(projector, x.reshape(-1, 3), np.zeros((1, 3)), s_max)
            self.x[a:b] = x
            self.x_c[a:b] = g.x_c.reshape(-1, S, 3)
            self.n_c[a:b] = g.n_c.reshape(-1, S, 3)
            self.s[a:b] = g.s.reshape(-1, S)
            self.face[a:b] = g.face.reshape(-1, S)
            self.ok[a:b] = g.ok.reshape(-1, S)
        self.frames = projector.mesh.face_frames

    def __len__(self):
        return len(self.t)

    def batch(self, ids):
        S = self.t.shape[1]
        f = self.face[ids].reshape(-1)
        dirs = np.repeat(self.dirs[ids], S, axis=0)
        geom = SampleGeometry(self.x_c[ids].reshape(-1, 3).astype(np.float64), self.s[ids].reshape(-1).astype(np.float64),
                              self.n_c[ids].reshape(-1, 3).astype(np.float64), f, None, self.ok[ids].reshape(-1),
                              self.frames[f], dirs)
        return geom, self.x[ids].reshape(-1, 3).astype(np.float64)


class Trainer:
    def __init__(self, data: CaptureData, config: TrainConfig = TrainConfig(), out_dir=None,
                 dtype=np.float64):
        self.data = data
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.projector = BaseProjector(data.mesh)
        lo, hi = data.mesh.bounds
        pad = 2.0 * data.s_max + 1e-6 * data.mesh.diagonal
        m = config.model
        self.field = LatentField((lo - pad, hi + pad), m.grid, m.grid_hat, m.decoder,
                                 make_rng(config.seed, "field"), dtype)
        self.lighting = SHLighting.constant(1.0 / np.pi)  # irradiance 1 everywhere
        self.centers: Optional[np.ndarray] = None
        self.adam = AdamState()
        self.iteration = 0
        self.metrics: list[dict] = []
        self.pool: Optional[RayPool] = None
        ext = np.max(self.field.hi - self.field.lo)
        finest = m.grid.resolutions[-1]
        self.fd_step = config.fd_step if config.fd_step is not None else 0.5 * ext / finest

    # setup ----------------------------------------------------------------------------------
    def prepare(self):
        if self.pool is None:
            ids = self.data.train_ids
            self.pool = RayPool(self.projector, [self.data.cameras[i] for i in ids], self.data.images[ids],
                                self.data.s_max, self.config.n_samples, make_rng(self.config.seed, "jitter"))
            log.info("ray pool: %d of %d rays hit the shell", len(self.pool), self.pool.n_total)
        return self.pool

    def _init_centers(self, feats):
        cfg = self.config
        L, F = self.field.grid_f.config.levels, self.field.grid_f.config.features_per_level
        rng = make_rng(cfg.seed, "centers")
        idx = rng.choice(len(feats), size=cfg.clusters, replace=len(feats) < cfg.clusters)
        self.centers = feats[idx].reshape(cfg.clusters, L, F).transpose(1, 0, 2).copy()

    def model(self) -> CaptureModel:
        return CaptureModel(self.projector, self.field, self.lighting, self.data.s_max)

    # density finite differences ---------------------------------------------------------------
    def density_at(self, x):
        geom = project_samples(self.projector, x, np.zeros((1, 3)), self.data.s_max)
        f, _ = self.field.grid_f.encode(self.field.normalize(geom.x_c), need_cache=False)
        return np.where(geom.ok, self.field.decoder.density(f, geom.s), 0.0)

    def density_gradient(self, x):
        h = self.fd_step
        g = np.zeros_like(x)
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            g[:, a] = (self.density_at(x + e) - self.density_at(x - e)) / (2 * h)
        return g

    # objective -------------------------------------------------------------------------------
    def loss_and_grads(self, geom: SampleGeometry, x, t, delta, gt, frozen: Optional[dict] = None):
        """Total loss, per-term values and all gradients on one batch (accumulated into the field).

        ``frozen`` holds the density-gradient targets, sample subsets and the cluster targets P so that
        finite-difference checks see the same constants; the dict used is returned.
        """
        cfg = self.config
        R, S = t.shape
        frozen = {} if frozen is None else frozen
        self.field.zero_grad()
        ev = evaluate_samples(self.field, self.lighting, geom, need_cache=True)
        rgb, _, w, cc = volume_render(ev.sigma.reshape(R, S), ev.color.reshape(R, S, 3), t, delta, cfg.background)
        L_rec, g_rgb = loss_rec(rgb, gt)
        terms = {"L_rec": L_rec, "L_clu": 0.0, "L_dis": 0.0, "L_nor": 0.0}
        g_w = None
        if cfg.lambda_dis > 0:
            terms["L_dis"], gd = loss_distortion(w, t, delta)
            g_w = cfg.lambda_dis * gd
        g_normal = None
        if cfg.lambda_nor > 0 and cfg.normal_samples > 0:
            if "normal_idx" not in frozen:
                wf = np.where(geom.ok, w.reshape(-1), -1.0)
                k = min(cfg.normal_samples, int(np.sum(wf > 0)))
                idx = np.argsort(-wf, kind="stable")[:k]
                frozen["normal_idx"] = idx
                frozen["normal_target"] = -self.density_gradient(x[idx])
            idx = frozen["normal_idx"]
            if len(idx):
                terms["L_nor"], gn, _ = loss_normal(frozen["normal_target"], ev.n_f[idx], cfg.normal_clamp)
                g_normal = np.zeros_like(ev.n_f)
                g_normal[idx] = cfg.lambda_nor * gn
        grad_f_extra = None
        g_mu = None
        if cfg.lambda_clu > 0 and cfg.cluster_samples > 0:
            feats = ev.field_cache.f
            if "cluster_idx" not in frozen:
                okid = np.flatnonzero(geom.ok)
                k = min(cfg.cluster_samples, len(okid))
                rng = make_rng(cfg.seed, f"subset/{self.iteration}")
                frozen["cluster_idx"] = np.sort(rng.choice(okid, size=k, replace=False)) if k else okid
            cidx = frozen["cluster_idx"]
            if len(cidx):
                if self.centers is None:
                    self._init_centers(feats[cidx])
                L = self.field.grid_f.config.levels
                lc, gf, gmu, ps = cluster_losses(feats[cidx], self.centers, L, cfg.kappa, frozen.get("cluster_p"))
                frozen.setdefault("cluster_p", ps)
                terms["L_clu"] = lc
                full = np.zeros_like(feats)
                full[cidx] = cfg.lambda_clu * gf
                grad_f_extra = (full, np.zeros_like(ev.field_cache.f_hat))
                g_mu = cfg.lambda_clu * gmu
        total = L_rec + cfg.lambda_clu * terms["L_clu"] + cfg.lambda_dis * terms["L_dis"] + cfg.lambda_nor * terms["L_nor"]
        g_sigma, g_color = volume_render_backward(cc, g_rgb, g_w)
        g_light = backward_samples(self.field, self.lighting, ev, g_sigma.reshape(-1), g_color.reshape(-1, 3),
                                   g_normal, grad_f_extra)
        grads = dict(self.field.gradients())
        grads["lighting"] = g_light
        if g_mu is not None:
            grads["clusters"] = g_mu
        return total, terms, grads, frozen

    def parameters(self) -> dict:
        p = dict(self.field.parameters())
        p["lighting"] = self.lighting.coeffs
        if self.centers is not None:
            p["clusters"] = self.centers
        return p

    # loop ------------------------------------------------------------------------------------
    def current_lr(self) -> float:
        cfg = self.config
        if cfg.iterations <= 1:
            return cfg.lr
        frac = min(self.iteration / (cfg.iterations - 1), 1.0)
        return cfg.lr * (cfg.lr_final / cfg.lr) ** frac

    def step(self) -> dict:
        pool = self.prepare()
        cfg = self.config
        # one stream per iteration keeps resumed runs identical to uninterrupted ones
        rng = make_rng(cfg.seed, f"batch/{self.iteration}")
        ids = np.sort(rng.choice(len(pool), size=min(cfg.rays_per_batch, len(pool)), replace=False))
        geom, x = pool.batch(ids)
        total, terms, grads, _ = self.loss_and_grads(geom, x, pool.t[ids], pool.delta[ids], pool.gt[ids])
        if not np.isfinite(total):
            self._dump_batch(ids, terms)
            raise TrainingDiverged(f"non-finite loss at iteration {self.iteration}: {terms}")
        params = self.parameters()
        adam_step(params, {k: grads[k] for k in params}, self.adam, self.current_lr())
        self.iteration += 1
        terms["total"] = total
        return terms

    def _dump_batch(self, ids, terms):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.pool
        np.savez(self.out_dir / f"diverged_{self.iteration}.npz", ray_ids=ids, t=p.t[ids], gt=p.gt[ids],
                 x=p.x[ids], ok=p.ok[ids], **{k: np.asarray(v) for k, v in terms.items()})

    def evaluate_heldout(self, view: Optional[int] = None) -> float:
        v = self.data.heldout[0] if view is None else view
        rgb, _, _ = render_capture_view(self.data.cameras[v], self.model(),
                                        RenderSettings(self.config.n_samples, self.data.s_max,
                                                       self.config.background))
        return psnr(rgb, self.data.images[v])

    def fit(self, iterations: Optional[int] = None, progress: bool = False) -> list[dict]:
        cfg = self.config
        n = cfg.iterations if iterations is None else iterations
        self.prepare()
        acc = {k: 0.0 for k in METRIC_COLUMNS[1:5]}
        cnt = 0
        t0 = time.time()
        while self.iteration < n:
            terms = self.step()
            for k in acc:
                acc[k] += terms[k]
            cnt += 1
            it = self.iteration
            do_eval = bool(self.data.heldout) and (it % cfg.eval_every == 0 or it == n)
            if it % cfg.log_every == 0 or do_eval:
                row = {"iteration": it, **{k: v / cnt for k, v in acc.items()}}
                row["heldout_PSNR"] = self.evaluate_heldout() if do_eval else float("nan")
                self.metrics.append(row)
                acc = {k: 0.0 for k in acc}
                cnt = 0
                msg = f"it {it} L_rec {row['L_rec']:.4f} psnr {row['heldout_PSNR']:.2f} ({time.time() - t0:.0f}s)"
                log.info(msg)
                if progress:
                    print(msg, flush=True)
        return self.metrics

    # persistence -----------------------------------------------------------------------------
    def write_metrics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(METRIC_COLUMNS)
            for r in self.metrics:
                wr.writerow([r["iteration"]] + [
                    "" if (k == "heldout_PSNR" and not np.isfinite(r[k])) else f"{r[k]:.8g}" for k in METRIC_COLUMNS[1:]])

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        tensors = {"lighting": self.lighting.coeffs}
        if self.centers is not None:
            tensors["clusters"] = self.centers
        for name, m in self.adam.m.items():
            tensors[f"adam.m.{name}"] = m
            tensors[f"adam.v.{name}"] = self.adam.v[name]
        meta = {"iteration": self.iteration, "train_config": self.config.to_dict(), "s_max": self.data.s_max,
                "adam_steps": self.adam.step, "fd_step": self.fd_step}
        meta.update(extra_meta or {})
        save_field(path, self.field, tensors, meta)

    def load(self, path) -> None:
        field, tensors, meta = load_field(path, dtype=self.field.dtype)
        self.field = field
        self.lighting = SHLighting(tensors.pop("lighting").astype(np.float64))
        if "clusters" in tensors:
            self.centers = tensors.pop("clusters").astype(np.float64)
        self.adam = AdamState()
        for key, arr in tensors.items():
            if key.startswith("adam.m."):
                name = key[len("adam.m."):]
                self.adam.m[name] = arr.astype(np.float64)
                self.adam.v[name] = tensors[f"adam.v.{name}"].astype(np.float64)
                self.adam.step[name] = int(meta["adam_steps"][name])
        self.iteration = int(meta.get("iteration", 0))


def load_capture_model(path, mesh) -> tuple[CaptureModel, dict]:
    field, tensors, meta = load_field(path)
    lighting = SHLighting(tensors["lighting"].astype(np.float64))
    return CaptureModel(BaseProjector(mesh), field, lighting, float(meta["s_max"])), meta
