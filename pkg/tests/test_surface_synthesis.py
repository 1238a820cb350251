import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter

from mesotex.geometry.mesh import grid_plane, uv_sphere
from mesotex.geometry.projection import BaseProjector
from mesotex.metrics import seam_discontinuity
from mesotex.synthesis.library import PatchLibrary
from mesotex.synthesis.patches import FeaturePatch
from mesotex.synthesis.quilting import synthesize_planar
from mesotex.synthesis.surface import (
    PatchPyramid, UvAtlasTarget, alpha_ramp, blend_and_paste, box_down, build_template,
    coarse_to_fine_match, exhaustive_match, fetch_template_features, interpolate_vector_field,
    overlap_take_new, pick_region, synthesize_on_surface, write_surface_result)
from mesotex.texture import read_texture


def identity_quats(R):
    q = np.zeros((R, R, 4))
    q[..., 3] = 1.0
    return q


def crops_library(src, n, R=16, dim_f=4, seed=0):
    rng = np.random.default_rng(seed)
    patches = []
    for _ in range(n):
        i, j = rng.integers(0, src.shape[0] - R, 2)
        patches.append(FeaturePatch(src[i:i + R, j:j + R].copy(), identity_quats(R), np.eye(3),
                                    np.ones((R, R), bool), 0.0, dim_f))
    return PatchLibrary.from_patches(patches)


def smooth_source(size=160, C=5, seed=0):
    rng = np.random.default_rng(seed)
    return gaussian_filter(rng.normal(size=(size, size, C)), (3, 3, 0)) * 10


def bump_source(size=256):
    y, x = np.mgrid[:size, :size] / size
    a, b = 2 * np.pi * 8 * x, 2 * np.pi * 8 * y
    return np.stack([np.sin(a) * np.cos(b), np.cos(a), np.sin(b), np.sin(a + b), 0 * x], axis=-1)


def constant_library(R=16, value=0.7):
    p = FeaturePatch(np.full((R, R, 5), value), identity_quats(R), np.eye(3), np.ones((R, R), bool), 0.0, 4)
    return PatchLibrary.from_patches([p, p])


@pytest.fixture(scope="module")
def plane():
    mesh = grid_plane(1.0, 33)
    return mesh, interpolate_vector_field(mesh, [(mesh.n_vertices // 2, [1.0, 0.0, 0.0])])


def center_template(mesh, R=16, world_size=0.25):
    v = mesh.n_vertices // 2
    fid = int(np.flatnonzero((mesh.faces == v).any(axis=1))[0])
    return build_template(BaseProjector(mesh), mesh.vertices[v], fid, [1.0, 0.0, 0.0], R, world_size)


# --- vector field ---------------------------------------------------------------


def test_single_control_is_projected_everywhere():
    mesh = uv_sphere(12, 24)
    v0 = 40
    n0 = mesh.vertex_normals[v0]
    c = np.cross(n0, [0.0, 0.0, 1.0])
    vf = interpolate_vector_field(mesh, [(v0, c)])
    n = mesh.vertex_normals
    proj = c - (n @ c)[:, None] * n
    ok = np.linalg.norm(proj, axis=1) > 1e-6
    expect = proj[ok] / np.linalg.norm(proj[ok], axis=1, keepdims=True)
    assert np.allclose(vf.vectors[ok], expect, atol=1e-12)


def test_field_unit_and_tangent():
    mesh = uv_sphere(12, 24)
    rng = np.random.default_rng(1)
    ctr = []
    for v in rng.choice(mesh.n_vertices, 4, replace=False):
        n = mesh.vertex_normals[v]
        d = rng.normal(size=3)
        ctr.append((int(v), d - n * (n @ d)))
    vf = interpolate_vector_field(mesh, ctr)
    assert np.allclose(np.linalg.norm(vf.vectors, axis=1), 1.0, atol=1e-6)
    assert np.all(np.abs(np.sum(vf.vectors * mesh.vertex_normals, axis=1)) < 1e-6)


def test_equidistant_vertex_gets_mean_direction():
    mesh = grid_plane(1.0, 5)
    # vertices on the middle row: ids 10..14; controls at both ends, the centre 12 is equidistant
    a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    vf = interpolate_vector_field(mesh, [(10, a), (14, b)])
    centre = np.argmin(np.linalg.norm(mesh.vertices - mesh.vertices[[10, 14]].mean(axis=0), axis=1))
    expect = (a + b) / np.linalg.norm(a + b)
    assert np.allclose(vf.vectors[centre], expect, atol=1e-9)


def test_non_tangent_control_rejected():
    mesh = grid_plane(1.0, 5)
    with pytest.raises(ValueError):
        interpolate_vector_field(mesh, [(3, [0.0, 0.0, 1.0])])


# --- region picking ---------------------------------------------------------------


def test_pick_on_empty_map_is_any_vertex():
    mesh = grid_plane(1.0, 9)
    tg = UvAtlasTarget.create(mesh, 32, 32, 5, 4)
    picks = {pick_region(tg, np.random.default_rng(s), 0.1) for s in range(30)}
    assert len(picks) > 5 and all(0 <= p < mesh.n_vertices for p in picks)


def test_pick_on_full_map_is_none():
    mesh = grid_plane(1.0, 9)
    tg = UvAtlasTarget.create(mesh, 32, 32, 5, 4)
    tg.texture.provenance[:] = 0
    assert pick_region(tg, np.random.default_rng(0), 0.1) is None


def test_frontier_footprint_audit(plane):
    mesh, vf = plane
    tg = UvAtlasTarget.create(mesh, 64, 64, 5, 4)
    tg.texture.provenance[:, :28] = 0  # left part of the square synthesized
    pj = BaseProjector(mesh)
    world_size = 0.25
    for s in range(20):
        v = pick_region(tg, np.random.default_rng(s), 0.5 * world_size)
        fid = int(np.flatnonzero((mesh.faces == v).any(axis=1))[0])
        tpl = build_template(pj, mesh.vertices[v], fid, vf.vectors[v], 16, world_size)
        _, m = fetch_template_features(tg, tpl)
        assert m.any() and not m.all()


# --- fetch -----------------------------------------------------------------------


def test_fetch_from_empty_map(plane):
    mesh, _ = plane
    tg = UvAtlasTarget.create(mesh, 64, 64, 5, 4)
    _, m = fetch_template_features(tg, center_template(mesh))
    assert not m.any()


def test_paste_then_fetch_round_trip(plane):
    mesh, _ = plane
    lib = crops_library(smooth_source(), 4)
    tg = UvAtlasTarget.create(mesh, 64, 64, 5, 4)
    tpl = center_template(mesh)
    R = lib.R
    blend_and_paste(tg, tpl, lib, 2, np.zeros((R, R, 5)), np.zeros((R, R), bool))
    tile, m = fetch_template_features(tg, tpl)
    assert m.all()
    assert np.abs(tile - lib.features[2]).max() < 1e-3


def test_mask_fraction_matches_filled_points(plane):
    mesh, _ = plane
    tg = UvAtlasTarget.create(mesh, 64, 64, 5, 4)
    tpl = center_template(mesh)
    # fill whole texel columns so every bilinear footprint is either fully filled or fully empty
    tg.texture.provenance[:, :32] = 0
    _, m = fetch_template_features(tg, tpl)
    col = tpl.uv[..., 0] * 64 - 0.5
    c0 = np.floor(col)
    fc = col - c0
    expect = ((c0 <= 31) & (fc < 1)) | ((c0 + 1 <= 31) & (fc > 0))
    expect &= tpl.on
    assert m.mean() == pytest.approx(expect.mean())


# --- pyramid matching --------------------------------------------------------------


@pytest.fixture(scope="module")
def pyramid():
    return PatchPyramid.build(crops_library(bump_source(), 400, seed=3))


def test_pyramid_levels_are_box_averages(pyramid):
    for a, b in zip(pyramid.levels[:-1], pyramid.levels[1:]):
        assert np.abs(box_down(a) - b).max() < 1e-6


def test_exact_tile_survives_every_level(pyramid):
    rng = np.random.default_rng(0)
    R = pyramid.levels[0].shape[1]
    m = np.zeros((R, R), bool)
    m[:, :6] = True
    for pid in (5, 77, 901):
        tile = pyramid.levels[0][pid]
        r = coarse_to_fine_match(tile, m, pyramid, rng)
        assert pid in r.candidates and r.errors.min() == 0.0


def test_single_patch_library():
    pyr = PatchPyramid.build(crops_library(smooth_source(), 1))
    R = pyr.levels[0].shape[1]
    m = np.ones((R, R), bool)
    one = PatchPyramid([lv[:1] for lv in pyr.levels])
    assert coarse_to_fine_match(np.zeros((R, R, 4)), m, one, np.random.default_rng(0)).chosen == 0


def random_mask(rng, R):
    ii, jj = np.mgrid[:R, :R]
    kind = rng.integers(3)
    w = rng.integers(3, R // 2)
    if kind == 0:
        return jj < w
    if kind == 1:
        return (jj < w) | (ii < w)
    c = rng.uniform(0, R, 2)
    return np.hypot(ii - c[0], jj - c[1]) > rng.uniform(R / 3, R / 1.5)


def test_coarse_to_fine_close_to_exhaustive(pyramid):
    rng = np.random.default_rng(5)
    # held-out content: the same bump texture under fresh noise
    src = bump_source() + 0.05 * np.random.default_rng(1).normal(size=(256, 256, 5))
    R = pyramid.levels[0].shape[1]
    good, ratio = 0, []
    for _ in range(100):
        i, j = rng.integers(0, 256 - R, 2)
        tile = src[i:i + R, j:j + R, :4]
        m = random_mask(rng, R)
        r = coarse_to_fine_match(tile, m, pyramid, rng)
        _, best, errs, full = exhaustive_match(tile, m, pyramid)
        good += errs[r.chosen] <= 1.1 * best
        ratio.append(full / r.full_comparisons)
    assert good >= 90
    assert min(ratio) >= 10


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 50.0), st.integers(0, 10 ** 6))
def test_match_invariant_to_uniform_scale(scale, seed):
    lib = crops_library(smooth_source(), 30)
    rng = np.random.default_rng(seed)
    R = lib.R
    tile = rng.normal(size=(R, R, 4))
    m = random_mask(rng, R)
    a = PatchPyramid.build(lib)
    lib.features *= scale
    b = PatchPyramid.build(lib)
    ra = coarse_to_fine_match(tile, m, a, np.random.default_rng(0))
    rb = coarse_to_fine_match(tile * scale, m, b, np.random.default_rng(0))
    assert list(ra.candidates) == list(rb.candidates)


# --- blending --------------------------------------------------------------------


def test_empty_target_is_pure_paste(plane):
    mesh, _ = plane
    lib = crops_library(smooth_source(), 4)
    tg = UvAtlasTarget.create(mesh, 64, 64, 5, 4)
    tpl = center_template(mesh)
    for mode in ("min_cut", "alpha"):
        t2 = UvAtlasTarget.create(mesh, 64, 64, 5, 4)
        n = blend_and_paste(t2, tpl, lib, 1, np.zeros((16, 16, 5)), np.zeros((16, 16), bool), mode)
        assert n > 0 and np.all(t2.texture.provenance[t2.filled] == 1)
    del tg


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_min_cut_copy_semantics(seed):
    rng = np.random.default_rng(seed)
    R = 16
    old, new = rng.normal(size=(R, R, 5)), rng.normal(size=(R, R, 5))
    m = random_mask(rng, R)
    take = overlap_take_new(old, new, m, 4, 3)
    assert take[~m].all()  # unsynthesized texels always take the new patch
    out = np.where(take[..., None], new, old)
    from_old = np.all(out == old, axis=-1)
    from_new = np.all(out == new, axis=-1)
    assert np.all(from_old ^ from_new)


def test_min_cut_keeps_old_when_it_matches():
    R = 16
    rng = np.random.default_rng(0)
    new = rng.normal(size=(R, R, 5))
    m = np.zeros((R, R), bool)
    m[:, :5] = True
    old = new.copy()
    old[:, :2] += 10.0  # disagree only in the two outer columns
    take = overlap_take_new(old, new, m, 4)
    assert not take[:, :2].any() and take[:, 5:].all()


def test_alpha_ramp_hand_values():
    m = np.zeros((8, 8), bool)
    m[:, :4] = True
    lam = alpha_ramp(m, 2.0)
    # texel (r, 3) is 1 texel from the unsynthesized columns, (r, 2) two, (r, 0) four
    assert lam[4, 3] == pytest.approx(0.5)
    assert lam[4, 2] == pytest.approx(1.0)
    assert lam[4, 5] == 0.0


def test_alpha_blend_hand_computation(plane):
    mesh, _ = plane
    lib = crops_library(smooth_source(), 4)
    tg = UvAtlasTarget.create(mesh, 64, 64, 5, 4)
    tpl = center_template(mesh)
    R = lib.R
    old = np.full((R, R, 5), 3.0)
    m = np.zeros((R, R), bool)
    m[:, :4] = True
    blend_and_paste(tg, tpl, lib, 0, old, m, "alpha")
    tile, _ = fetch_template_features(tg, tpl)
    lam = alpha_ramp(m, lib.overlap)
    new = lib.features[0]
    for i, j in ((5, 3), (9, 2), (12, 1)):
        want = lam[i, j] * old[i, j] + (1 - lam[i, j]) * new[i, j]
        if lam[i, j] < 1.0:
            assert np.allclose(tile[i, j], want, atol=1e-3)


# --- growth loop -------------------------------------------------------------------


def test_flat_target_comparable_to_planar(plane):
    mesh, vf = plane
    lib = crops_library(bump_source(), 400)
    surf, flat = [], []
    for s in range(3):
        t = synthesize_on_surface(mesh, lib, vf, seed=s, resolution=(64, 64), world_size=16 / 64).texture
        surf.append(seam_discontinuity(t.features[..., :4], t.provenance))
        p = synthesize_planar(lib, 64, 64, seed=s)
        flat.append(seam_discontinuity(p.features[..., :4], p.provenance))
    assert np.mean(surf) <= 2.0 * np.mean(flat)


def test_sphere_constant_library_is_uniform():
    mesh = uv_sphere(16, 32)
    vf = interpolate_vector_field(mesh, [(10, np.cross(mesh.vertex_normals[10], [0, 0, 1]))])
    res = synthesize_on_surface(mesh, constant_library(), vf, seed=0, resolution=(96, 96), world_size=0.6)
    assert res.target.fill_fraction() >= 0.99
    f = res.texture.features[res.target.filled]
    assert np.allclose(f, 0.7, atol=1e-9)


def test_growth_deterministic_and_monotone(plane):
    mesh, vf = plane
    lib = crops_library(smooth_source(), 30)
    a = synthesize_on_surface(mesh, lib, vf, seed=4, resolution=(64, 64), world_size=0.25)
    b = synthesize_on_surface(mesh, lib, vf, seed=4, resolution=(64, 64), world_size=0.25)
    assert np.array_equal(a.texture.features, b.texture.features)
    assert np.array_equal(a.texture.provenance, b.texture.provenance)
    assert np.all(np.diff(a.history) > 0)
    assert a.target.fill_fraction() >= 0.99


def test_sidecar_written(tmp_path, plane):
    mesh, vf = plane
    res = synthesize_on_surface(mesh, constant_library(), vf, seed=0, resolution=(32, 32), world_size=0.25)
    path = tmp_path / "out.nrtx"
    write_surface_result(path, res, "plane.obj", [(544, [1.0, 0.0, 0.0])])
    meta = json.loads((tmp_path / "out.nrtx.json").read_text())
    assert meta["target_mesh"] == "plane.obj" and meta["atlas_resolution"] == [32, 32]
    assert meta["vector_field_controls"][0]["vertex"] == 544
    tex = read_texture(path)
    assert np.array_equal(tex.provenance, res.texture.provenance)
