"""Shell rendering of captured latent fields and of synthesized textures mapped onto new meshes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..field.decoder import FieldOutputs
from ..geometry.bvh import shell_intervals
from ..geometry.projection import BaseProjector
from ..shading.lighting import SHLighting, shade, shade_backward
from ..shading.normals import assemble_fine_normal, fine_normal_backward, quat_to_matrix
from ..texture import SynthesizedTexture, sample_bilinear, sample_nearest
from .camera import Camera, generate_rays
from .volume import make_sample_plan, volume_render

DEFAULT_SAMPLES = 64


def default_s_max(mesh) -> float:
    return 4.0 * mesh.mean_edge_length


@dataclass
class RenderSettings:
    n_samples: int = DEFAULT_SAMPLES
    s_max: Optional[float] = None
    background: tuple = (0.0, 0.0, 0.0)
    chunk_rays: int = 1024

    def resolve_s_max(self, mesh) -> float:
        return float(self.s_max) if self.s_max is not None else default_s_max(mesh)


class SampleGeometry(NamedTuple):
    x_c: np.ndarray
    s: np.ndarray
    n_c: np.ndarray
    face: np.ndarray
    bary: np.ndarray
    ok: np.ndarray      # projection succeeded and |s| <= s_max
    frames: np.ndarray  # (n, 3, 3) T_c of the footpoint face
    dirs: np.ndarray

    def subset(self, idx) -> "SampleGeometry":
        return SampleGeometry(*(a[idx] for a in self))


def project_samples(projector: BaseProjector, x, dirs, s_max: float) -> SampleGeometry:
    pb = projector.project(x, t_max=s_max)
    ok = pb.ok & (np.abs(pb.s) <= s_max)
    face = np.where(ok, pb.face_id, 0)
    xc = np.where(ok[:, None], pb.x_c, projector.mesh.vertices[projector.mesh.faces[face, 0]])
    nc = np.where(ok[:, None], pb.n_c, projector.mesh.face_frames[face, :, 2])
    s = np.where(ok, pb.s, 0.0)
    return SampleGeometry(xc, s, nc, face, pb.barycentric, ok, projector.mesh.face_frames[face],
                          np.asarray(dirs, dtype=np.float64))


class SampleEval(NamedTuple):
    sigma: np.ndarray
    color: np.ndarray
    outputs: FieldOutputs
    n_f: np.ndarray
    frames: np.ndarray
    ok: np.ndarray
    field_cache: object
    shade_cache: object


def shade_outputs(out: FieldOutputs, frames, n_c, dirs, lighting: SHLighting, need_cache: bool = False):
    n_f = assemble_fine_normal(out.theta, out.phi_vec, frames)
    res = shade(n_c, n_f, dirs, out.k_d, out.k_s, out.g, lighting, need_cache=need_cache)
    return (n_f,) + (res if need_cache else (res, None))


def evaluate_samples(field, lighting: SHLighting, geom: SampleGeometry, need_cache: bool = False) -> SampleEval:
    out, fcache = field.forward(geom.x_c, geom.s)
    n_f, color, scache = shade_outputs(out, geom.frames, geom.n_c, geom.dirs, lighting, need_cache)
    sigma = np.where(geom.ok, out.sigma, 0.0)
    return SampleEval(sigma, color, out, n_f, geom.frames, geom.ok, fcache if need_cache else None, scache)


def backward_samples(field, lighting: SHLighting, ev: SampleEval, g_sigma, g_color, g_normal=None,
                     grad_f_extra=None) -> np.ndarray:
    """Accumulate field gradients for per-sample dL/dsigma, dL/dcolor and optional dL/dn_f; returns dL/dlighting."""
    gs = shade_backward(ev.shade_cache, g_color, lighting)
    g_n = gs.n_f if g_normal is None else gs.n_f + g_normal
    g_theta, g_pv = fine_normal_backward(ev.outputs.theta, ev.outputs.phi_vec, ev.frames, g_n)
    grads = {"sigma": np.where(ev.ok, g_sigma, 0.0), "k_d": gs.k_d, "k_s": gs.k_s, "g": gs.g,
             "theta": g_theta, "phi_vec": g_pv}
    field.backward(ev.field_cache, grads, grad_f_extra=grad_f_extra)
    return gs.lighting


@dataclass
class CaptureModel:
    """Everything needed to render a captured texture on its base shape."""

    projector: BaseProjector
    field: object
    lighting: SHLighting
    s_max: float

    @property
    def mesh(self):
        return self.projector.mesh


def _render_rays(origins, dirs, projector, s_max, n_samples, background, eval_fn, chunk):
    n = len(origins)
    rgb = np.tile(np.asarray(background, dtype=np.float64), (n, 1))
    depth = np.zeros(n)
    acc = np.zeros(n)
    t_in, t_out = shell_intervals(projector.bvh, projector.mesh, origins, dirs, s_max)
    plan_all = make_sample_plan(t_in, t_out, n_samples, s_max)
    hit_ids = np.flatnonzero(plan_all.hit)
    for start in range(0, len(hit_ids), chunk):
        ids = hit_ids[start:start + chunk]
        t, delta = plan_all.t[ids], plan_all.delta[ids]
        x = origins[ids, None, :] + t[..., None] * dirs[ids, None, :]
        d = np.broadcast_to(dirs[ids, None, :], x.shape).reshape(-1, 3)
        geom = project_samples(projector, x.reshape(-1, 3), d, s_max)
        sigma, color = eval_fn(geom)
        c, dep, w, _ = volume_render(sigma.reshape(t.shape), color.reshape(t.shape + (3,)), t, delta, background)
        rgb[ids], depth[ids], acc[ids] = c, dep, w.sum(axis=1)
    return rgb, depth, acc


def render_rays(model: CaptureModel, origins, dirs, settings: RenderSettings = RenderSettings()):
    def fn(geom):
        ev = evaluate_samples(model.field, model.lighting, geom)
        return ev.sigma, ev.color

    return _render_rays(origins, dirs, model.projector, model.s_max, settings.n_samples, settings.background, fn,
                        settings.chunk_rays)


def render_capture_view(cam: Camera, model: CaptureModel, settings: RenderSettings = RenderSettings()):
    """Returns (rgb (H,W,3), depth (H,W), opacity (H,W))."""
    o, d = generate_rays(cam)
    rgb, depth, acc = render_rays(model, o, d, settings)
    shp = (cam.height, cam.width)
    return rgb.reshape(shp + (3,)), depth.reshape(shp), acc.reshape(shp)


def mapped_sample_inputs(target: BaseProjector, tex: SynthesizedTexture, geom: SampleGeometry):
    """(f, f_hat, frames T~_c Q, valid) for samples projected onto a UV-mapped target."""
    mesh = target.mesh
    uv = mesh.interpolate_uv(geom.face, geom.bary)
    inside = np.all((uv >= 0.0) & (uv <= 1.0), axis=1)
    feats, valid = sample_bilinear(tex.features, tex.filled, uv)
    quat, (r, c) = sample_nearest(tex.quat, uv)
    hand = tex.handedness[r, c]
    valid &= inside & geom.ok & tex.filled[r, c]
    quat = np.where(valid[:, None], quat, np.array([0.0, 0.0, 0.0, 1.0]))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    frames = geom.frames @ quat_to_matrix(quat, hand)
    return feats[:, :tex.dim_f], feats[:, tex.dim_f:], frames, valid


def render_mapped(cam: Camera, target: BaseProjector, tex: SynthesizedTexture, decoder, lighting: SHLighting,
                  settings: RenderSettings = RenderSettings()):
    """Render ``tex`` applied to the target mesh through its UVs; returns (rgb, depth, opacity)."""
    if not target.mesh.has_uv():
        raise ValueError("target mesh needs UV coordinates")
    s_max = settings.resolve_s_max(target.mesh)

    def fn(geom):
        f, fh, frames, valid = mapped_sample_inputs(target, tex, geom)
        out, _ = decoder.decode(f, fh, geom.s)
        _, color, _ = shade_outputs(out, frames, geom.n_c, geom.dirs, lighting)
        return np.where(valid, out.sigma, 0.0), color

    o, d = generate_rays(cam)
    rgb, depth, acc = _render_rays(o, d, target, s_max, settings.n_samples, settings.background, fn,
                                   settings.chunk_rays)
    shp = (cam.height, cam.width)
    return rgb.reshape(shp + (3,)), depth.reshape(shp), acc.reshape(shp)
