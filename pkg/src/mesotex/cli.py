"""``mesotex`` command line: gen-scene, train, extract, synthesize, render, eval.

Settings come from an optional JSON project file (``--config``); explicit flags win over the file,
which wins over the defaults below. Exit codes: 0 ok, 2 config or input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._rng import make_rng
from .metrics import per_level_variance_ratio, psnr, seam_discontinuity, within_cluster_variance_ratio
from .texture import TextureFormatError, read_texture, write_texture

log = logging.getLogger("mesotex")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


class NumericalAbort(RuntimeError):
    pass


# project configuration --------------------------------------------------------------------------

@dataclass
class Paths:
    scene: Optional[str] = None        # directory written by gen-scene
    mesh: Optional[str] = None         # base mesh OBJ (defaults to the scene's)
    cameras: Optional[str] = None      # cameras JSON (defaults to the scene's)
    checkpoint: Optional[str] = None
    library: Optional[str] = None
    texture: Optional[str] = None
    target: Optional[str] = None       # UV-mapped target mesh for surface synthesis / mapped renders
    output: Optional[str] = None


@dataclass
class SceneSection:
    kind: str = "bump_plane"
    params: dict = field(default_factory=dict)


@dataclass
class ExtractSection:
    samples: int = 8000
    patch_size: int = 128
    world_size: Optional[float] = None
    overlap: Optional[int] = None


@dataclass
class SynthesisSection:
    mode: str = "planar"               # planar | surface
    height: int = 512
    width: int = 512
    quilt: str = "matched"             # matched | random | random_cut
    temperature: Optional[float] = None
    candidates: Optional[int] = None
    resolution: tuple = (512, 512)
    world_size: Optional[float] = None
    blend: str = "min_cut"
    controls: list = field(default_factory=list)  # [[vertex, [x, y, z]], ...]


@dataclass
class RenderSection:
    view: str = "capture"              # capture | mapped
    cameras: list = field(default_factory=list)    # camera indices, empty = all
    n_samples: int = 64
    background: tuple = (0.0, 0.0, 0.0)


@dataclass
class EvalSection:
    pred: list = field(default_factory=list)
    gt: list = field(default_factory=list)
    clusters: int = 64
    cluster_points: int = 4096


@dataclass
class ProjectConfig:
    paths: Paths = field(default_factory=Paths)
    scene: SceneSection = field(default_factory=SceneSection)
    train: dict = field(default_factory=dict)      # TrainConfig fields, validated on use
    extract: ExtractSection = field(default_factory=ExtractSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    render: RenderSection = field(default_factory=RenderSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    deterministic: bool = True
    threads: Optional[int] = None


_SECTIONS = {"paths": Paths, "scene": SceneSection, "extract": ExtractSection, "synthesis": SynthesisSection,
             "render": RenderSection, "eval": EvalSection}


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(d: dict) -> ProjectConfig:
    d = dict(d)
    names = {f.name for f in dataclasses.fields(ProjectConfig)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown keys in config: {unknown}")
    for k, cls in _SECTIONS.items():
        if k in d:
            d[k] = _build(cls, d[k], k)
    if "train" in d and not isinstance(d["train"], dict):
        raise ConfigError("train must be an object")
    return ProjectConfig(**d)


def load_config(path: Optional[str]) -> ProjectConfig:
    if path is None:
        return ProjectConfig()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(d)


def _override(section, **kw):
    """Flags left at None keep the config/default value."""
    for k, v in kw.items():
        if v is not None:
            setattr(section, k, v)


def _need(path: Optional[str], what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required path: {what}")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericalAbort(f"non-finite values in {what}")
    return x


# scene directories ------------------------------------------------------------------------------

def _scene_mesh_path(scene_dir: Path) -> Path:
    man = json.loads((scene_dir / "scene.json").read_text())
    return scene_dir / man["mesh"]


def _resolve_mesh(cfg: ProjectConfig) -> Path:
    if cfg.paths.mesh is not None:
        return _need(cfg.paths.mesh, "mesh")
    scene = _need(cfg.paths.scene, "scene directory (or paths.mesh)")
    return _need(str(_scene_mesh_path(scene)), "scene mesh")


def _load_capture(scene_dir: Path):
    from .geometry.obj_io import read_obj
    from .render.camera import read_cameras_json
    from .render.images import read_image
    from .train.trainer import CaptureData

    man_path = _need(str(scene_dir / "scene.json"), "scene manifest")
    man = json.loads(man_path.read_text())
    mesh = read_obj(_need(str(scene_dir / man["mesh"]), "scene mesh"))
    cams, imgs = read_cameras_json(_need(str(scene_dir / man["cameras"]), "cameras JSON"))
    if any(p is None for p in imgs):
        raise ConfigError("every camera record in a scene needs an image path")
    images = np.stack([read_image(_need(p, "image")) for p in imgs])
    return CaptureData(mesh, cams, images, list(man["heldout"]), float(man["s_max"]))


# commands ---------------------------------------------------------------------------------------

def cmd_gen_scene(cfg: ProjectConfig) -> int:
    from .geometry.obj_io import write_obj
    from .render.camera import write_cameras_json
    from .render.images import write_png
    from .train.scenes import SceneParams, generate_synthetic_scene

    if cfg.scene.kind not in ("bump_plane", "thorn_sphere"):
        raise ConfigError(f"scene.kind: unknown scene kind {cfg.scene.kind!r} (use bump_plane or thorn_sphere)")
    params = dict(cfg.scene.params)
    if "elevation_deg" in params:
        params["elevation_deg"] = tuple(params["elevation_deg"])
    try:
        sp = SceneParams(**params) if params else None
    except TypeError as exc:
        raise ConfigError(f"scene.params: {exc}") from exc
    out = Path(cfg.paths.output or "scene")
    scene = generate_synthetic_scene(cfg.scene.kind, sp, seed=cfg.seed)
    _finite(scene.images, "reference images")
    (out / "images").mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(scene.images):
        name = f"images/view_{i:03d}.png"
        write_png(out / name, img)
        names.append(name)
    mesh_name = "plane.obj" if cfg.scene.kind == "bump_plane" else "sphere.obj"
    write_obj(scene.mesh, out / mesh_name)
    write_cameras_json(out / "cameras.json", scene.cameras, names)
    manifest = {"kind": scene.kind, "seed": cfg.seed, "params": scene.params.to_dict(), "mesh": mesh_name,
                "cameras": "cameras.json", "images": names, "heldout": scene.heldout, "s_max": scene.s_max,
                "field": {"bump_centers": scene.bump_centers.tolist(), "albedo_phase": scene.albedo_phase.tolist(),
                          "lighting": scene.lighting.coeffs.tolist()}}
    (out / "scene.json").write_text(json.dumps(manifest, indent=1))
    log.info("wrote %d views to %s", len(names), out)
    return EXIT_OK


def cmd_train(cfg: ProjectConfig, resume: Optional[str] = None) -> int:
    from .train.config import train_config_from_dict
    from .train.trainer import Trainer

    d = dict(cfg.train)
    d.setdefault("seed", cfg.seed)
    d.setdefault("deterministic", cfg.deterministic)
    tcfg = train_config_from_dict(d)
    data = _load_capture(_need(cfg.paths.scene, "scene directory"))
    out = Path(cfg.paths.output or "run")
    out.mkdir(parents=True, exist_ok=True)
    tr = Trainer(data, tcfg, out)
    if resume is not None:
        tr.load(_need(resume, "checkpoint to resume"))
        log.info("resuming at iteration %d", tr.iteration)
    tr.fit()
    tr.save(out / "checkpoint.ckpt")
    tr.write_metrics(out / "metrics.csv")
    return EXIT_OK


def cmd_extract(cfg: ProjectConfig) -> int:
    from .field.checkpoint import load_field
    from .geometry.obj_io import read_obj
    from .synthesis.library import build_library, write_library

    ck = _need(cfg.paths.checkpoint, "checkpoint")
    mesh = read_obj(_resolve_mesh(cfg))
    fld, _, _ = load_field(ck)
    e = cfg.extract
    lib, rep = build_library(mesh, fld, e.samples, e.patch_size, e.world_size, e.overlap,
                             make_rng(cfg.seed, "poisson"))
    _finite(lib.features, "patch features")
    out = Path(cfg.paths.output or "library.nrlib")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_library(out, lib)
    log.info("library: %d samples, %d accepted, %d rejected (miss), %d rejected (distance), %d patches",
             rep.samples, rep.accepted, rep.rejected_misses, rep.rejected_distance, lib.size)
    print(json.dumps({"samples": rep.samples, "accepted": rep.accepted, "rejected_misses": rep.rejected_misses,
                      "rejected_distance": rep.rejected_distance, "patches": lib.size}))
    return EXIT_OK


def _feature_preview(tex) -> np.ndarray:
    f = tex.features[..., :3]
    m = tex.filled
    img = np.zeros(f.shape[:2] + (3,))
    if m.any():
        lo, hi = f[m].min(axis=0), f[m].max(axis=0)
        img[m] = (f[m] - lo) / np.maximum(hi - lo, 1e-12)
    return img


def cmd_synthesize(cfg: ProjectConfig) -> int:
    from .render.images import write_png
    from .synthesis.library import read_library

    s = cfg.synthesis
    if s.mode not in ("planar", "surface"):
        raise ConfigError(f"synthesis.mode: expected planar or surface, got {s.mode!r}")
    lib = read_library(_need(cfg.paths.library, "patch library"))
    out = Path(cfg.paths.output or "texture.nrtx")
    out.parent.mkdir(parents=True, exist_ok=True)
    if s.mode == "planar":
        from .synthesis.quilting import synthesize_planar

        tex = synthesize_planar(lib, s.height, s.width, cfg.seed, s.temperature, s.candidates, s.quilt)
        _finite(tex.features[tex.filled], "synthesized features")
        write_texture(out, tex)
    else:
        from .geometry.obj_io import read_obj
        from .synthesis.surface import interpolate_vector_field, synthesize_on_surface, write_surface_result

        tpath = _need(cfg.paths.target, "target mesh")
        mesh = read_obj(tpath)
        if not mesh.has_uv():
            raise ConfigError(f"{tpath}: target mesh needs UV coordinates")
        controls = [(int(v), np.asarray(vec, dtype=np.float64)) for v, vec in s.controls]
        if not controls:
            # one control on vertex 0 along its first tangent when none are configured
            controls = [(0, _default_tangent(mesh))]
        vf = interpolate_vector_field(mesh, controls)
        res = synthesize_on_surface(mesh, lib, vf, cfg.seed, tuple(s.resolution), s.world_size, s.blend)
        tex = res.texture
        _finite(tex.features[tex.filled], "synthesized features")
        write_surface_result(out, res, str(tpath), controls)
        log.info("surface synthesis: %.2f%% texels filled in %d iterations", 100 * res.target.fill_fraction(),
                 res.iterations)
    write_png(out.with_name(out.name + ".preview.png"), _feature_preview(tex))
    return EXIT_OK


def _default_tangent(mesh) -> np.ndarray:
    n = mesh.vertex_normals[0]
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t = a - n * (a @ n)
    return t / np.linalg.norm(t)


def cmd_render(cfg: ProjectConfig) -> int:
    from .field.checkpoint import load_field
    from .geometry.obj_io import read_obj
    from .geometry.projection import BaseProjector
    from .render.camera import read_cameras_json
    from .render.images import write_png
    from .render.pipeline import CaptureModel, RenderSettings, render_capture_view, render_mapped
    from .shading.lighting import SHLighting

    r = cfg.render
    if r.view not in ("capture", "mapped"):
        raise ConfigError(f"render.view: expected capture or mapped, got {r.view!r}")
    cam_path = cfg.paths.cameras
    if cam_path is None and cfg.paths.scene is not None:
        cam_path = str(Path(cfg.paths.scene) / "cameras.json")
    cams, _ = read_cameras_json(_need(cam_path, "cameras JSON"))
    fld, tensors, meta = load_field(_need(cfg.paths.checkpoint, "checkpoint"))
    lighting = SHLighting(tensors["lighting"].astype(np.float64))
    ids = list(r.cameras) if r.cameras else list(range(len(cams)))
    for i in ids:
        if not 0 <= i < len(cams):
            raise ConfigError(f"render.cameras: index {i} out of range for {len(cams)} cameras")
    out = Path(cfg.paths.output or "renders")
    out.mkdir(parents=True, exist_ok=True)
    if r.view == "capture":
        model = CaptureModel(BaseProjector(read_obj(_resolve_mesh(cfg))), fld, lighting, float(meta["s_max"]))
        settings = RenderSettings(r.n_samples, model.s_max, tuple(r.background))
        render = lambda cam: render_capture_view(cam, model, settings)[0]
    else:
        target = BaseProjector(read_obj(_need(cfg.paths.target, "target mesh")))
        tex = read_texture(_need(cfg.paths.texture, "texture"))
        f, fh = fld.features(np.zeros((1, 3)))
        if (tex.dim_f, tex.features.shape[2]) != (f.shape[1], f.shape[1] + fh.shape[1]):
            raise ConfigError(f"texture has {tex.dim_f}+{tex.features.shape[2] - tex.dim_f} channels, the "
                              f"checkpoint decoder expects {f.shape[1]}+{fh.shape[1]}")
        settings = RenderSettings(r.n_samples, float(meta["s_max"]), tuple(r.background))
        render = lambda cam: render_mapped(cam, target, tex, fld.decoder, lighting, settings)[0]
    for i in ids:
        img = _finite(render(cams[i]), f"render of camera {i}")
        write_png(out / f"render_{i:03d}.png", img)
    return EXIT_OK


def cmd_eval(cfg: ProjectConfig) -> int:
    from .render.images import read_image

    e = cfg.eval
    if len(e.pred) != len(e.gt):
        raise ConfigError("eval.pred and eval.gt need the same number of images")
    result: dict = {}
    if e.pred:
        vals = []
        for p, g in zip(e.pred, e.gt):
            a, b = read_image(_need(p, "prediction image")), read_image(_need(g, "ground-truth image"))
            if a.shape != b.shape:
                raise ConfigError(f"image shapes differ: {p} {a.shape} vs {g} {b.shape}")
            vals.append(psnr(a, b))
        result["psnr"] = vals
        result["psnr_mean"] = float(np.mean(vals))
    if cfg.paths.texture is not None:
        tex = read_texture(_need(cfg.paths.texture, "texture"))
        result["seam_discontinuity"] = seam_discontinuity(tex.features[..., :tex.dim_f], tex.provenance)
    if cfg.paths.checkpoint is not None:
        from .field.checkpoint import load_field
        from .geometry.obj_io import read_obj
        from .synthesis.poisson import sample_surface

        fld, _, _ = load_field(_need(cfg.paths.checkpoint, "checkpoint"))
        mesh = read_obj(_resolve_mesh(cfg))
        pts, _ = sample_surface(mesh, e.cluster_points, make_rng(cfg.seed, "eval"))
        f, _ = fld.features(pts)
        result["within_cluster_variance_ratio"] = within_cluster_variance_ratio(f, e.clusters, cfg.seed)
        result["per_level_variance_ratio"] = per_level_variance_ratio(f, fld.grid_f.config.levels, e.clusters,
                                                                      cfg.seed)
    if not result:
        raise ConfigError("nothing to evaluate: give eval.pred/gt, paths.texture or paths.checkpoint")
    for k, v in result.items():
        _finite(np.asarray(v, dtype=np.float64), k)
    text = json.dumps(result, indent=2)
    if cfg.paths.output:
        Path(cfg.paths.output).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.paths.output).write_text(text)
    print(text)
    return EXIT_OK


# argument parsing -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON project file")
    common.add_argument("--seed", type=int, help="root seed for every named random stream")
    common.add_argument("--threads", type=int, help="worker threads for parallel kernels")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="fixed reduction orders (byte-identical reruns)")
    common.add_argument("--out", "-o", dest="output", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mesotex", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", parents=[common], help="render a synthetic capture")
    g.add_argument("--kind")

    t = sub.add_parser("train", parents=[common], help="fit a latent field to a scene")
    t.add_argument("--scene")
    t.add_argument("--iterations", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")

    x = sub.add_parser("extract", parents=[common], help="build a patch library from a checkpoint")
    x.add_argument("--checkpoint")
    x.add_argument("--scene")
    x.add_argument("--mesh")
    x.add_argument("--samples", type=int)
    x.add_argument("--patch-size", type=int)

    s = sub.add_parser("synthesize", parents=[common], help="quilt a texture from a library")
    s.add_argument("--library")
    s.add_argument("--mode", choices=["planar", "surface"])
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--target", help="UV-mapped target mesh (surface mode)")
    s.add_argument("--resolution", type=int, nargs=2)
    s.add_argument("--quilt", choices=["matched", "random", "random_cut"])

    r = sub.add_parser("render", parents=[common], help="render a checkpoint or a mapped texture")
    r.add_argument("--checkpoint")
    r.add_argument("--scene")
    r.add_argument("--mesh")
    r.add_argument("--cameras")
    r.add_argument("--view", choices=["capture", "mapped"])
    r.add_argument("--camera", type=int, action="append", dest="camera_ids")
    r.add_argument("--texture")
    r.add_argument("--target")
    r.add_argument("--samples", type=int)

    e = sub.add_parser("eval", parents=[common], help="PSNR, seam and cluster statistics")
    e.add_argument("--pred", nargs="+")
    e.add_argument("--gt", nargs="+")
    e.add_argument("--texture")
    e.add_argument("--checkpoint")
    e.add_argument("--scene")
    e.add_argument("--mesh")
    return p


def _apply_flags(cfg: ProjectConfig, a) -> None:
    _override(cfg, seed=a.seed, deterministic=a.deterministic, threads=a.threads)
    _override(cfg.paths, output=a.output, scene=getattr(a, "scene", None), mesh=getattr(a, "mesh", None),
              cameras=getattr(a, "cameras", None), checkpoint=getattr(a, "checkpoint", None),
              library=getattr(a, "library", None), texture=getattr(a, "texture", None),
              target=getattr(a, "target", None))
    if a.command == "gen-scene":
        _override(cfg.scene, kind=a.kind)
    elif a.command == "train" and a.iterations is not None:
        cfg.train["iterations"] = a.iterations
    elif a.command == "extract":
        _override(cfg.extract, samples=a.samples, patch_size=a.patch_size)
    elif a.command == "synthesize":
        _override(cfg.synthesis, mode=a.mode, height=a.height, width=a.width, quilt=a.quilt,
                  resolution=None if a.resolution is None else tuple(a.resolution))
    elif a.command == "render":
        _override(cfg.render, view=a.view, cameras=a.camera_ids, n_samples=a.samples)
    elif a.command == "eval":
        _override(cfg.eval, pred=a.pred, gt=a.gt)


def _set_threads(n: Optional[int]) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    from .field.checkpoint import CheckpointError
    from .synthesis.library import LibraryFormatError
    from .train.trainer import TrainingDiverged

    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cmds = {"gen-scene": cmd_gen_scene, "train": cmd_train, "extract": cmd_extract, "synthesize": cmd_synthesize,
            "render": cmd_render, "eval": cmd_eval}
    try:
        cfg = load_config(a.config)
        _apply_flags(cfg, a)
        if cfg.seed < 0 or cfg.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        _set_threads(cfg.threads)
        if a.command == "train":
            return cmd_train(cfg, a.resume)
        return cmds[a.command](cfg)
    except (TrainingDiverged, NumericalAbort, FloatingPointError) as exc:
        print(f"mesotex {a.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FileNotFoundError, TextureFormatError, LibraryFormatError, CheckpointError,
            ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"mesotex {a.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
