"""Analytic meso-structure scenes with reference ground-truth renders.

The ground truth never touches the trainable pipeline: the base-surface coordinates are analytic
(plane height or sphere radius) and compositing uses its own marcher.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .._rng import make_rng
from ..geometry.mesh import TriangleMesh, grid_plane, icosphere
from ..render.camera import Camera, camera_from_fov, generate_rays, look_at
from ..shading.lighting import SHLighting, shade
from ..shading.sh import project_environment

HEIGHT_TABLE = 1201  # samples per side of the tabulated plane height field


@dataclass(frozen=True)
class SceneParams:
    size: float = 0.2             # plane side or sphere radius
    resolution: int = 101         # plane vertices per side / icosphere subdivisions for spheres
    amplitude: float = 0.003      # meso height
    bump_radius: float = 0.008
    n_bumps: int = 40
    transition: float = 0.0005    # density ramp width around the height surface
    sigma_peak: float = 2.0e4
    specular: float = 0.08
    glossiness: float = 8.0
    pattern_period: float = 0.05
    n_views: int = 32
    n_heldout: int = 2
    image_size: int = 64
    fov_deg: float = 40.0
    camera_distance: float = 0.24
    elevation_deg: tuple = (40.0, 70.0)
    gt_samples: int = 128
    s_max_edges: float = 4.0      # shell half thickness in mean edge lengths

    def to_dict(self):
        return asdict(self)


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def default_environment(order: int = 4) -> SHLighting:
    sun = np.array([0.4, -0.3, 0.87])
    sun /= np.linalg.norm(sun)

    def env(d):
        sky = 0.55 + 0.25 * d[:, 2:3]
        lobe = 1.6 * np.maximum(d @ sun, 0.0)[:, None] ** 4
        tint = np.array([1.0, 0.95, 0.85])
        return 0.35 * (sky * np.array([0.9, 0.95, 1.05]) + lobe * tint)

    return SHLighting(project_environment(env, order), order)


@dataclass
class SyntheticScene:
    kind: str
    params: SceneParams
    mesh: TriangleMesh
    s_max: float
    lighting: SHLighting
    cameras: list
    images: np.ndarray          # (n_views + n_heldout, H, W, 3)
    depths: np.ndarray
    heldout: list
    bump_centers: np.ndarray    # (n, 2) plane coords or (n, 3) unit directions
    albedo_phase: np.ndarray
    seed: int = 0
    _table: object = field(default=None, repr=False)

    @property
    def train_ids(self):
        return [i for i in range(len(self.cameras)) if i not in self.heldout]

    # analytic base-surface coordinates --------------------------------------------------------
    def base_coords(self, x):
        """(surface parameter for the height field, signed distance above the analytic base)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "bump_plane":
            return x[..., :2], x[..., 2]
        r = np.linalg.norm(x, axis=-1)
        return x / np.maximum(r, 1e-12)[..., None], r - self.params.size

    def height_exact(self, q):
        p = self.params
        d2 = np.sum((q[..., None, :] - self.bump_centers) ** 2, axis=-1)
        return p.amplitude * np.sum(np.exp(-d2 / (2 * p.bump_radius ** 2)), axis=-1)

    def _height_table(self):
        if getattr(self, "_table", None) is None:
            p = self.params
            n = HEIGHT_TABLE
            half = 0.5 * p.size + 2 * p.bump_radius
            ax = np.linspace(-half, half, n)
            X, Y = np.meshgrid(ax, ax, indexing="ij")
            Hm = np.zeros_like(X)
            for c in self.bump_centers:  # one bump at a time keeps memory flat
                Hm += p.amplitude * np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * p.bump_radius ** 2))
            self._table = (ax, RegularGridInterpolator((ax, ax), Hm, bounds_error=False, fill_value=0.0))
        return self._table[1]

    def height(self, q):
        p = self.params
        if self.kind == "bump_plane":
            q = np.asarray(q, dtype=np.float64)
            return self._height_table()(q.reshape(-1, 2)).reshape(q.shape[:-1])
        # thorns: narrow cones on the sphere, width as an angle
        cosang = np.clip(q @ self.bump_centers.T, -1, 1)
        ang = np.arccos(cosang) * p.size
        return p.amplitude * np.sum(np.maximum(1.0 - ang / p.bump_radius, 0.0) ** 2, axis=-1)

    def normal(self, x):
        """Analytic shading normal of the meso surface at the column of x."""
        q, _ = self.base_coords(x)
        h = 1e-5 if self.kind == "bump_plane" else 1e-4
        if self.kind == "bump_plane":
            gx = (self.height_exact(q + [h, 0]) - self.height_exact(q - [h, 0])) / (2 * h)
            gy = (self.height_exact(q + [0, h]) - self.height_exact(q - [0, h])) / (2 * h)
            n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
        else:
            n0 = q
            t1 = np.cross(n0, [0.0, 0.0, 1.0])
            t1 = np.where(np.linalg.norm(t1, axis=-1, keepdims=True) < 1e-6, np.cross(n0, [1.0, 0, 0]), t1)
            t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
            t2 = np.cross(n0, t1)
            R = self.params.size

            def hd(t):
                v = n0 + h * t
                return self.height(v / np.linalg.norm(v, axis=-1, keepdims=True))

            g1 = (hd(t1) - hd(-t1)) / (2 * h * R)
            g2 = (hd(t2) - hd(-t2)) / (2 * h * R)
            n = n0 - g1[..., None] * t1 - g2[..., None] * t2
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def albedo(self, x):
        q, _ = self.base_coords(x)
        p = self.params
        k = 2 * np.pi / p.pattern_period
        if self.kind == "bump_plane":
            a, b = q[..., 0], q[..., 1]
        else:
            a = np.arctan2(q[..., 1], q[..., 0]) * p.size
            b = q[..., 2] * p.size
        ph = self.albedo_phase
        out = np.stack([
            0.5 + 0.3 * np.sin(k * a + ph[0]) * np.cos(0.7 * k * b + ph[1]),
            0.45 + 0.3 * np.sin(0.6 * k * (a + b) + ph[2]),
            0.4 + 0.25 * np.cos(k * b + ph[3]) + 0.1 * np.sin(1.3 * k * a),
        ], axis=-1)
        return np.clip(out, 0.05, 0.95)

    def density(self, x):
        q, s = self.base_coords(x)
        p = self.params
        inside = (np.abs(s) <= self.s_max)
        if self.kind == "bump_plane":
            half = 0.5 * p.size
            inside &= (np.abs(q[..., 0]) <= half) & (np.abs(q[..., 1]) <= half)
        return np.where(inside, p.sigma_peak * smoothstep((self.height(q) - s) / p.transition + 0.5), 0.0)

    def radiance(self, x, d):
        n = self.normal(x)
        kd = self.albedo(x)
        m = n.reshape(-1, 3).shape[0]
        p = self.params
        c = shade(None, n.reshape(-1, 3), d.reshape(-1, 3), kd.reshape(-1, 3), np.full(m, p.specular),
                  np.full(m, p.glossiness), self.lighting)
        return c.reshape(x.shape)

    def shell_interval(self, o, d):
        """Analytic [t_in, t_out] of the slab |s| <= s_max (plane) or the spherical shell."""
        if self.kind == "bump_plane":
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-self.s_max - o[:, 2]) / d[:, 2]
                t2 = (self.s_max - o[:, 2]) / d[:, 2]
            lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
            bad = ~np.isfinite(lo)
            lo[bad], hi[bad] = np.inf, -np.inf
            return np.maximum(lo, 0.0), hi
        R = self.params.size + self.s_max
        b = np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - R * R
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0))
        lo, hi = -b - sq, -b + sq
        miss = disc <= 0
        lo[miss], hi[miss] = np.inf, -np.inf
        return np.maximum(lo, 0.0), hi

    def render_reference(self, cam: Camera, n_samples: Optional[int] = None, background=(0.0, 0.0, 0.0)):
        """Dense midpoint marcher against the analytic density; returns (rgb, depth)."""
        n_samples = n_samples or self.params.gt_samples
        o, d = generate_rays(cam)
        t0, t1 = self.shell_interval(o, d)
        hit = t1 > t0
        rgb = np.tile(np.asarray(background, dtype=np.float64), (len(o), 1))
        depth = np.zeros(len(o))
        ids = np.flatnonzero(hit)
        for start in range(0, len(ids), 512):
            sel = ids[start:start + 512]
            L = (t1[sel] - t0[sel])[:, None]
            t = t0[sel, None] + (np.arange(n_samples)[None] + 0.5) / n_samples * L
            dt = L / n_samples
            x = o[sel, None] + t[..., None] * d[sel, None]
            sig = self.density(x)
            tau = sig * dt
            alpha = -np.expm1(-tau)
            trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
            w = trans * alpha
            wsum = w.sum(axis=1)
            # color only where the sample contributes; it does not depend on the density profile
            live = w > 1e-7
            col = np.zeros(x.shape)
            col[live] = self.radiance(x[live], np.broadcast_to(d[sel, None], x.shape)[live])
            acc = np.einsum("rs,rsc->rc", w, col)
            dacc = np.sum(w * t, axis=1)
            rgb[sel] = acc + (1.0 - wsum)[:, None] * np.asarray(background)
            depth[sel] = dacc / np.maximum(wsum, 1e-10)
        return rgb.reshape(cam.height, cam.width, 3), depth.reshape(cam.height, cam.width)


def _camera_ring(n: int, distance: float, elevations, image_size: int, fov: float, rng, target=(0.0, 0.0, 0.0)):
    cams = []
    golden = np.pi * (3 - np.sqrt(5))
    for i in range(n):
        az = i * golden + rng.uniform(-0.1, 0.1)
        el = np.radians(elevations[0] + (elevations[1] - elevations[0]) * ((i * 0.618034) % 1.0))
        eye = np.array(target) + distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(camera_from_fov(image_size, image_size, fov, look_at(eye, target)))
    return cams


def _poisson_centers(rng, n, lo, hi, min_dist, dims=2):
    pts = []
    tries = 0
    while len(pts) < n and tries < 100 * n:
        tries += 1
        if dims == 2:
            c = rng.uniform(lo, hi, size=2)
        else:
            c = rng.normal(size=3)
            c /= np.linalg.norm(c)
        if all(np.linalg.norm(c - p) >= min_dist for p in pts):
            pts.append(c)
    return np.array(pts)


def generate_synthetic_scene(kind: str = "bump_plane", params: Optional[SceneParams] = None,
                             seed: int = 0, render: bool = True) -> SyntheticScene:
    if kind not in ("bump_plane", "thorn_sphere"):
        raise ValueError(f"unknown scene kind {kind!r}")
    if params is None:
        params = SceneParams() if kind == "bump_plane" else SceneParams(
            size=0.1, resolution=4, amplitude=0.012, bump_radius=0.01, n_bumps=60, camera_distance=0.33,
            elevation_deg=(-60.0, 60.0), fov_deg=45.0)
    rng = make_rng(seed, "scene")
    if kind == "bump_plane":
        mesh = grid_plane(params.size, params.resolution)
        half = 0.5 * params.size
        centers = _poisson_centers(rng, params.n_bumps, -half, half, 2.5 * params.bump_radius)
    else:
        mesh = icosphere(params.resolution, params.size)
        centers = _poisson_centers(rng, params.n_bumps, 0, 0, 2.5 * params.bump_radius / params.size, dims=3)
    s_max = params.s_max_edges * mesh.mean_edge_length
    phase = rng.uniform(0, 2 * np.pi, size=4)
    cams = _camera_ring(params.n_views + params.n_heldout, params.camera_distance, params.elevation_deg,
                        params.image_size, params.fov_deg, make_rng(seed, "cameras"))
    heldout = list(range(params.n_views, params.n_views + params.n_heldout))
    n = len(cams)
    H = W = params.image_size
    scene = SyntheticScene(kind, params, mesh, s_max, default_environment(), cams, np.zeros((n, H, W, 3)),
                           np.zeros((n, H, W)), heldout, centers, phase, seed)
    if render:
        for i, cam in enumerate(cams):
            scene.images[i], scene.depths[i] = scene.render_reference(cam)
    return scene
