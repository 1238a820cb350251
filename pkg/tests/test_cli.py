import hashlib
import json

import numpy as np
import pytest

from mesotex.cli import ConfigError, config_from_dict, load_config, main
from mesotex.geometry.mesh import grid_plane, uv_sphere
from mesotex.geometry.obj_io import write_obj
from mesotex.render.camera import read_cameras_json
from mesotex.render.images import read_image, write_png
from mesotex.synthesis.library import PatchLibrary, read_library, write_library
from mesotex.synthesis.patches import FeaturePatch
from mesotex.texture import SynthesizedTexture, read_texture, write_texture

SMALL = {
    "scene": {"params": {"n_views": 4, "n_heldout": 1, "image_size": 16, "gt_samples": 64}},
    "train": {"iterations": 20, "rays_per_batch": 128, "n_samples": 16, "log_every": 10, "eval_every": 20,
              "model": {"grid": {"levels": 4, "table_size": 4096}, "grid_hat": {"levels": 2, "table_size": 1024}}},
    "extract": {"samples": 40, "patch_size": 16},
    "synthesis": {"height": 32, "width": 32},
    "render": {"n_samples": 16, "cameras": [0]},
}


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def identity_quats(R):
    q = np.zeros((R, R, 4))
    q[..., 3] = 1.0
    return q


def ramp_library(R=16, n=6, seed=0):
    rng = np.random.default_rng(seed)
    ps = [FeaturePatch(rng.normal(size=(R, R, 5)), identity_quats(R), np.eye(3), np.ones((R, R), bool), 0.0, 4)
          for _ in range(n)]
    return PatchLibrary.from_patches(ps)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "small.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["gen-scene", "--config", str(cfg), "--out", str(d / "scene")]) == 0
    assert main(["train", "--config", str(cfg), "--scene", str(d / "scene"), "--out", str(d / "run")]) == 0
    return d, cfg


# --- config --------------------------------------------------------------------


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="synthesis"):
        config_from_dict({"synthesis": {"heigth": 3}})


def test_precedence_flag_over_file_over_default(tmp_path):
    assert load_config(None).synthesis.height == 512
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"synthesis": {"height": 48, "width": 16}, "seed": 5}))
    assert load_config(str(p)).synthesis.height == 48
    lib = tmp_path / "lib.nrlib"
    write_library(lib, ramp_library())
    out = tmp_path / "t.nrtx"
    assert main(["synthesize", "--config", str(p), "--library", str(lib), "--height", "24", "--out", str(out)]) == 0
    assert read_texture(out).features.shape[:2] == (24, 16)


def test_missing_config_file_exit_2(tmp_path):
    assert main(["eval", "--config", str(tmp_path / "none.json")]) == 2


# --- gen-scene -----------------------------------------------------------------


def test_default_scene_manifest(tmp_path):
    assert main(["gen-scene", "--out", str(tmp_path / "s")]) == 0
    s = tmp_path / "s"
    man = json.loads((s / "scene.json").read_text())
    cams, imgs = read_cameras_json(s / "cameras.json")
    assert (s / "plane.obj").is_file()
    assert len(man["images"]) - len(man["heldout"]) == 32
    assert len(list((s / "images").glob("*.png"))) == len(cams) == 34
    assert read_image(imgs[0]).shape == (64, 64, 3)


def test_same_seed_identical_directories(tmp_path, work):
    _, cfg = work
    for name in ("a", "b"):
        assert main(["gen-scene", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert main(["gen-scene", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert digest(tmp_path / "a") != digest(tmp_path / "c")


def test_invalid_kind_exit_2(tmp_path, capsys):
    assert main(["gen-scene", "--kind", "torus", "--out", str(tmp_path / "s")]) == 2
    assert "scene.kind" in capsys.readouterr().err


# --- train ---------------------------------------------------------------------


def test_train_writes_checkpoint_and_csv(work):
    d, _ = work
    assert (d / "run" / "checkpoint.ckpt").is_file()
    lines = (d / "run" / "metrics.csv").read_text().strip().splitlines()
    assert lines[0].startswith("iteration,L_rec") and len(lines) >= 2


def test_resume_continues_iterations(work, tmp_path):
    d, cfg = work
    out = tmp_path / "resumed"
    assert main(["train", "--config", str(cfg), "--scene", str(d / "scene"), "--out", str(out),
                 "--resume", str(d / "run" / "checkpoint.ckpt"), "--iterations", "30"]) == 0
    rows = (out / "metrics.csv").read_text().strip().splitlines()[1:]
    its = [int(r.split(",")[0]) for r in rows]
    assert its[0] > 20 and its[-1] == 30
    assert json.loads((out / "checkpoint.ckpt.json").read_text())["iteration"] == 30


def test_train_missing_scene_exit_2(tmp_path):
    assert main(["train", "--scene", str(tmp_path / "nowhere"), "--out", str(tmp_path / "r")]) == 2


# --- extract / synthesize ------------------------------------------------------


def test_extract_library_divisible_by_four(work, tmp_path, capsys):
    d, cfg = work
    out = tmp_path / "lib.nrlib"
    assert main(["extract", "--config", str(cfg), "--checkpoint", str(d / "run" / "checkpoint.ckpt"),
                 "--scene", str(d / "scene"), "--out", str(out)]) == 0
    rep = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    lib = read_library(out)
    assert lib.size % 4 == 0 and lib.size == 4 * rep["accepted"]
    assert rep["accepted"] + rep["rejected_misses"] + rep["rejected_distance"] == rep["samples"]
    assert abs(rep["samples"] - 40) <= 0.02 * 40 + 1


def test_planar_patch_sized_output_is_a_seed_copy(tmp_path):
    lib = ramp_library()
    path = tmp_path / "lib.nrlib"
    write_library(path, lib)
    lib = read_library(path)
    out = tmp_path / "t.nrtx"
    assert main(["synthesize", "--library", str(path), "--height", "16", "--width", "16", "--out", str(out)]) == 0
    tex = read_texture(out)
    pid = int(tex.provenance[0, 0])
    assert np.all(tex.provenance == pid)
    np.testing.assert_allclose(tex.features, lib.features[pid], atol=1e-6)


def test_synthesize_deterministic(tmp_path):
    path = tmp_path / "lib.nrlib"
    write_library(path, ramp_library())
    outs = []
    for name in ("a.nrtx", "b.nrtx"):
        assert main(["synthesize", "--library", str(path), "--height", "40", "--width", "40", "--seed", "3",
                     "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_surface_on_sphere_fills(tmp_path):
    p = FeaturePatch(np.full((16, 16, 5), 0.7), identity_quats(16), np.eye(3), np.ones((16, 16), bool), 0.0, 4)
    write_library(tmp_path / "c.nrlib", PatchLibrary.from_patches([p, p]))
    write_obj(uv_sphere(16, 32), tmp_path / "sphere.obj")
    out = tmp_path / "s.nrtx"
    assert main(["synthesize", "--mode", "surface", "--library", str(tmp_path / "c.nrlib"),
                 "--target", str(tmp_path / "sphere.obj"), "--resolution", "96", "96", "--out", str(out)]) == 0
    side = json.loads((tmp_path / "s.nrtx.json").read_text())
    assert side["fill_fraction"] >= 0.99 and side["atlas_resolution"] == [96, 96]
    assert side["target_mesh"].endswith("sphere.obj") and len(side["vector_field_controls"]) == 1


def test_synthesize_bad_library_exit_2(tmp_path):
    (tmp_path / "bad.nrlib").write_bytes(b"not a library")
    assert main(["synthesize", "--library", str(tmp_path / "bad.nrlib"), "--out", str(tmp_path / "t")]) == 2


# --- render --------------------------------------------------------------------


def test_render_capture_view(work, tmp_path):
    d, cfg = work
    out = tmp_path / "r"
    assert main(["render", "--config", str(cfg), "--checkpoint", str(d / "run" / "checkpoint.ckpt"),
                 "--scene", str(d / "scene"), "--out", str(out)]) == 0
    img = read_image(out / "render_000.png")
    assert img.shape == (16, 16, 3) and np.all(np.isfinite(img))


def test_render_empty_field_is_black(work, tmp_path):
    d, cfg = work
    write_obj(grid_plane(0.2, 11), tmp_path / "plane.obj")
    write_texture(tmp_path / "empty.nrtx", SynthesizedTexture.empty(32, 32, 12, 8))
    out = tmp_path / "r"
    assert main(["render", "--config", str(cfg), "--view", "mapped", "--checkpoint", str(d / "run" / "checkpoint.ckpt"),
                 "--cameras", str(d / "scene" / "cameras.json"), "--texture", str(tmp_path / "empty.nrtx"),
                 "--target", str(tmp_path / "plane.obj"), "--out", str(out)]) == 0
    assert np.all(read_image(out / "render_000.png") == 0)


def test_render_bad_pose_exit_2(work, tmp_path):
    d, _ = work
    items = json.loads((d / "scene" / "cameras.json").read_text())
    items[0]["pose"][0][0] = 3.0
    (tmp_path / "cams.json").write_text(json.dumps(items))
    assert main(["render", "--checkpoint", str(d / "run" / "checkpoint.ckpt"), "--scene", str(d / "scene"),
                 "--cameras", str(tmp_path / "cams.json"), "--out", str(tmp_path / "r")]) == 2


# --- eval ----------------------------------------------------------------------


def test_eval_identical_is_sentinel(tmp_path, capsys):
    img = np.random.default_rng(0).integers(0, 256, (8, 8, 3)) / 255.0
    write_png(tmp_path / "a.png", img)
    out = tmp_path / "m.json"
    assert main(["eval", "--pred", str(tmp_path / "a.png"), "--gt", str(tmp_path / "a.png"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["psnr"] == [99.0]


def test_eval_one_level_offset(tmp_path):
    k = np.random.default_rng(1).integers(0, 255, (8, 8, 3))
    write_png(tmp_path / "gt.png", k / 255.0)
    write_png(tmp_path / "pr.png", (k + 1) / 255.0)
    out = tmp_path / "m.json"
    assert main(["eval", "--pred", str(tmp_path / "pr.png"), "--gt", str(tmp_path / "gt.png"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["psnr_mean"] == pytest.approx(20 * np.log10(255.0), abs=1e-6)
    assert 20 * np.log10(255.0) == pytest.approx(48.13, abs=0.005)


def test_eval_missing_file_exit_2(tmp_path):
    assert main(["eval", "--pred", str(tmp_path / "no.png"), "--gt", str(tmp_path / "no.png")]) == 2


def test_eval_texture_and_cluster_stats(work, tmp_path):
    d, _ = work
    path = tmp_path / "lib.nrlib"
    write_library(path, ramp_library())
    assert main(["synthesize", "--library", str(path), "--height", "40", "--width", "40",
                 "--out", str(tmp_path / "t.nrtx")]) == 0
    out = tmp_path / "m.json"
    assert main(["eval", "--texture", str(tmp_path / "t.nrtx"), "--checkpoint", str(d / "run" / "checkpoint.ckpt"),
                 "--scene", str(d / "scene"), "--out", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m["seam_discontinuity"] >= 0 and 0 <= m["within_cluster_variance_ratio"] <= 1


def test_nonfinite_checkpoint_exit_3(work, tmp_path):
    from mesotex.field.checkpoint import load_field, save_field

    d, cfg = work
    fld, tensors, meta = load_field(d / "run" / "checkpoint.ckpt")
    for p in fld.parameters().values():
        p[...] = np.nan
    save_field(tmp_path / "nan.ckpt", fld, tensors, meta)
    assert main(["render", "--config", str(cfg), "--checkpoint", str(tmp_path / "nan.ckpt"),
                 "--scene", str(d / "scene"), "--out", str(tmp_path / "r")]) == 3
