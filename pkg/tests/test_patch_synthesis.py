import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter
from scipy.spatial.transform import Rotation

from mesotex.geometry.bvh import build_bvh
from mesotex.geometry.mesh import box, grid_plane, icosphere
from mesotex.metrics import seam_discontinuity
from mesotex.shading.normals import local_direction, quat_to_matrix
from mesotex.synthesis.library import (
    OverlapIndex, PatchLibrary, build_library, candidate_probabilities, match_candidates, read_library,
    write_library)
from mesotex.synthesis.patches import (
    FLIP_H, FLIP_V, FeaturePatch, augment_flips, canonical_quat, extract_patch, flip_patch)
from mesotex.synthesis.poisson import min_pairwise_distance, packing_radius, poisson_disk_sample
from mesotex.synthesis.quilting import (
    exhaustive_min_path, layout_mask, min_cut_seam, path_cost, synthesize_planar)
from mesotex.texture import read_texture, write_texture


class ConstantField:
    def __init__(self, f, fh):
        self.f, self.fh = np.asarray(f, float), np.asarray(fh, float)

    def features(self, x):
        n = len(x)
        return np.tile(self.f, (n, 1)), np.tile(self.fh, (n, 1))


class LinearField:
    """Features linear in position, so every patch is distinct."""

    def features(self, x):
        return np.column_stack([x[:, 0], x[:, 1], x[:, 0] * x[:, 1]]), x[:, :1] * 0.5


def identity_quats(R):
    q = np.zeros((R, R, 4))
    q[..., 3] = 1.0
    return q


def smooth_library(R=16, n=40, C=5, dim_f=4, seed=0):
    rng = np.random.default_rng(seed)
    src = gaussian_filter(rng.normal(size=(160, 160, C)), (3, 3, 0)) * 10
    patches = []
    for _ in range(n):
        i, j = rng.integers(0, 160 - R, 2)
        patches.append(FeaturePatch(src[i:i + R, j:j + R].copy(), identity_quats(R), np.eye(3),
                                    np.ones((R, R), bool), 0.0, dim_f))
    return PatchLibrary.from_patches(patches)


# --- poisson sampling ------------------------------------------------------


def test_poisson_huge_radius_gives_one_sample():
    s = poisson_disk_sample(grid_plane(1.0, 5), radius=10.0)
    assert len(s.points) == 1


def test_poisson_count_and_spacing_on_plane():
    mesh = grid_plane(0.2, 101)
    s = poisson_disk_sample(mesh, 2000, np.random.default_rng(3))
    assert abs(len(s.points) - 2000) <= 40
    assert min_pairwise_distance(s.points) >= 0.7 * packing_radius(mesh.area, 2000)
    assert np.allclose(s.frames[:, :, 2], [0, 0, 1])


def test_poisson_on_sphere_points_on_surface():
    mesh = icosphere(2)
    s = poisson_disk_sample(mesh, 100, np.random.default_rng(0))
    assert len(s.points) == 100
    r = np.linalg.norm(s.points, axis=1)
    assert np.all(r <= 1.0 + 1e-9) and np.all(r > 0.9)
    assert min_pairwise_distance(s.points) >= 0.7 * s.radius


def test_poisson_truncated_by_min_radius():
    mesh = grid_plane(1.0, 3)
    with pytest.warns(UserWarning):
        s = poisson_disk_sample(mesh, 1000, min_radius=0.1)
    assert s.truncated and len(s.points) < 1000


# --- extraction and flips --------------------------------------------------


def test_extract_flat_constant_patch():
    mesh = grid_plane(1.0, 11)
    field = ConstantField([0.3, -0.2], [0.7])
    p, why = extract_patch(mesh, None, field, [0.0, 0.0, 0.0], mesh.face_frames[0], R=16, world_size=0.5)
    assert why == "ok"
    assert p.features.shape == (16, 16, 3)
    assert np.allclose(p.features, [0.3, -0.2, 0.7])
    assert np.allclose(p.quat, [0, 0, 0, 1])
    assert p.valid.all() and p.mean_distance < 1e-12


def test_extract_default_resolution_shape():
    mesh = grid_plane(1.0, 3)
    p, _ = extract_patch(mesh, None, ConstantField([1.0], [2.0]), [0, 0, 0], mesh.face_frames[0],
                         world_size=0.5)
    assert p.features.shape == (128, 128, 2)


def test_extract_rejects_box_ridge():
    mesh = box((2.0, 2.0, 2.0))
    n = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
    ridge = np.array([0.0, 1.0, 0.0])
    # tangent along the ridge diagonal rotated by 45 degrees in the tangent plane
    t0 = np.cross(ridge, n)
    t = (t0 + ridge) / np.sqrt(2)
    frame = np.column_stack([t, np.cross(n, t), n])
    p, why = extract_patch(mesh, build_bvh(mesh), ConstantField([0.0], [0.0]), [1.0, 0.0, 1.0], frame,
                           R=16, world_size=1.0)
    assert p is None and why == "distance"


def test_extract_rejects_misses_off_the_edge():
    mesh = grid_plane(1.0, 5)
    p, why = extract_patch(mesh, None, ConstantField([0.0], [0.0]), [0.5, 0.5, 0.0], mesh.face_frames[0],
                           R=8, world_size=0.5)
    assert p is None and why == "misses"


def test_extract_fills_few_misses_from_neighbours():
    mesh = grid_plane(1.0, 5)
    p, why = extract_patch(mesh, None, LinearField(), [0.47, 0.0, 0.0], mesh.face_frames[0], R=20,
                           world_size=0.5, miss_tolerance=0.5)
    assert why == "ok" and not p.valid.all()
    assert np.all(np.isfinite(p.features))
    hit_values = {tuple(v) for v in p.features[p.valid].tolist()}
    assert all(tuple(v) in hit_values for v in p.features[~p.valid].tolist())


def random_patch(R=6, seed=0, flags=0):
    rng = np.random.default_rng(seed)
    q = canonical_quat(Rotation.random(R * R, random_state=seed).as_quat()).reshape(R, R, 4)
    return FeaturePatch(rng.normal(size=(R, R, 3)), q, np.eye(3), rng.random((R, R)) > 0.1, 0.1, 2, flags)


def test_double_flip_is_bitwise_identity():
    p = random_patch()
    for f in (FLIP_H, FLIP_V):
        back = flip_patch(flip_patch(p, f), f)
        assert back.features.tobytes() == p.features.tobytes()
        assert back.quat.tobytes() == p.quat.tobytes()
        assert back.valid.tobytes() == p.valid.tobytes()
        assert np.array_equal(back.T_s, p.T_s) and back.flags == p.flags


def test_constant_patch_flips_share_features():
    p = FeaturePatch(np.ones((4, 4, 2)), identity_quats(4), np.eye(3), np.ones((4, 4), bool), 0.0, 1)
    four = augment_flips(p)
    assert len(four) == 4
    for q in four:
        assert np.array_equal(q.features, p.features)
    dets = [np.linalg.det(q.T_s) for q in four]
    assert dets == pytest.approx([1, -1, -1, 1])
    assert len({q.T_s.tobytes() for q in four}) == 4


def bump_normal(x, y):
    """Unit normal of the asymmetric height h = exp(-(x-0.2)^2 - 2 y^2) * (1 + 0.5 x)."""
    g = np.exp(-(x - 0.2) ** 2 - 2 * y ** 2)
    hx = g * (0.5 - 2 * (x - 0.2) * (1 + 0.5 * x))
    hy = g * (-4 * y) * (1 + 0.5 * x)
    n = np.stack([-hx, -hy, np.ones_like(x)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def test_flipped_residuals_mirror_analytic_bump():
    R = 8
    c = (np.arange(R) - R / 2 + 0.5) / R * 2
    X, Y = np.meshgrid(c, c)  # column j <-> x, row i <-> y
    n_loc = bump_normal(X, Y)
    # random per-texel coarse frames; the decoded local direction is whatever reproduces the bump
    rot = Rotation.random(R * R, random_state=1)
    q = canonical_quat(rot.as_quat()).reshape(R, R, 4)
    Q = quat_to_matrix(q.reshape(-1, 4)).reshape(R, R, 3, 3)
    local = np.einsum("rcji,rcj->rci", Q, n_loc)  # Q^T n
    patch = FeaturePatch(np.zeros((R, R, 1)), q, np.eye(3), np.ones((R, R), bool), 0.0, 1)
    for flags, mx, my in ((FLIP_H, -1, 1), (FLIP_V, 1, -1), (FLIP_H | FLIP_V, -1, -1)):
        fp = flip_patch(patch, flags)
        loc = local
        if flags & FLIP_H:
            loc = loc[:, ::-1]
        if flags & FLIP_V:
            loc = loc[::-1]
        got = np.einsum("rcij,rcj->rci", fp.residual_matrices(), loc)
        # mirrored geometry h'(x, y) = h(mx x, my y)
        n_m = bump_normal(mx * X, my * Y) * np.array([mx, my, 1.0])
        np.testing.assert_allclose(got, n_m, atol=1e-12)


def test_local_direction_roundtrip_under_flip():
    # a decoded (theta, phi) direction composed with the flipped residual stays unit length
    p = random_patch(4, 3)
    fp = flip_patch(p, FLIP_H)
    d = local_direction(np.full(16, 0.4), np.tile([0.6, 0.8], (16, 1)))
    n = np.einsum("nij,nj->ni", fp.residual_matrices().reshape(-1, 3, 3), d)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)


# --- matching ---------------------------------------------------------------


def test_overlap_index_matches_linear_scan():
    rng = np.random.default_rng(0)
    for trial in range(500):
        P = int(rng.integers(4, 200))
        D = int(rng.integers(2, 60))
        X = rng.normal(size=(P, D)) * rng.random(D)
        idx = OverlapIndex(X, n_components=min(8, D), retrieve=8)
        q = rng.normal(size=D)
        got, _ = idx.query(q, 4)
        d2 = np.sum((X - q) ** 2, axis=1)
        want = np.lexsort((np.arange(P), d2))[:4]
        assert np.array_equal(got, want), trial


def test_exact_copy_is_always_a_candidate():
    lib = smooth_library()
    rng = np.random.default_rng(0)
    for pid in (0, 7, 33):
        for layout in ("left", "top", "L"):
            m = match_candidates(lib.features[pid].astype(float), lib, layout, rng)
            assert pid in m.candidates
            assert m.errors[list(m.candidates).index(pid)] == 0.0
            assert len(m.candidates) == 4


def test_small_library_warns_and_uses_all():
    lib = smooth_library(n=1)
    assert lib.size == 4
    with pytest.warns(UserWarning):
        m = match_candidates(lib.features[0], lib, "left", np.random.default_rng(0), k=6)
    assert sorted(m.candidates) == [0, 1, 2, 3]


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 20))
def test_matching_is_scale_consistent(scale, seed):
    lib = smooth_library(n=12, seed=seed % 3)
    scaled = PatchLibrary(lib.features * np.float32(scale), lib.quat, lib.T_s, lib.flags, lib.valid,
                          lib.mean_distance, lib.dim_f, lib.overlap)
    q = np.random.default_rng(seed).normal(size=lib.features.shape[1:]) * 3
    for layout in ("left", "top", "L"):
        a = match_candidates(q, lib, layout, np.random.default_rng(0)).candidates
        b = match_candidates(q * scale, scaled, layout, np.random.default_rng(0)).candidates
        assert set(a) == set(b)


def test_candidate_probabilities_favor_low_error():
    p = candidate_probabilities([1.0, 1.1, 2.0, 5.0])
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.diff(p) < 0)
    assert candidate_probabilities([0.0, 1.0])[0] == pytest.approx(1.0)


# --- seams ------------------------------------------------------------------


def test_seam_zero_column():
    e = np.random.default_rng(0).random((6, 5)) + 1
    e[:, 3] = 0
    s = min_cut_seam(e)
    assert np.all(s.path == 3) and s.cost == 0.0


def test_seam_diagonal_example():
    s = min_cut_seam([[1, 9, 9], [9, 1, 9], [9, 9, 1]])
    assert list(s.path) == [0, 1, 2] and s.cost == 3.0


def test_seam_ties_prefer_smaller_column():
    s = min_cut_seam(np.ones((4, 5)))
    assert np.all(s.path == 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 2 ** 31 - 1))
def test_seam_matches_exhaustive_search(h, w, seed):
    e = np.random.default_rng(seed).random((h, w))
    s = min_cut_seam(e)
    assert s.cost == pytest.approx(exhaustive_min_path(e), abs=1e-12)
    assert s.cost == pytest.approx(path_cost(e, s.path), abs=1e-12)
    assert np.all(np.abs(np.diff(s.path)) <= 1)


def test_layout_masks():
    R, o = 6, 2
    assert layout_mask("left", R, o).sum() == R * o
    assert layout_mask("top", R, o).sum() == R * o
    assert layout_mask("L", R, o).sum() == 2 * R * o - o * o


# --- planar synthesis ---------------------------------------------------------


def test_single_tile_is_seed_copy():
    lib = smooth_library()
    tex = synthesize_planar(lib, lib.R, lib.R, seed=5)
    pid = tex.provenance[0, 0]
    assert np.all(tex.provenance == pid)
    assert np.array_equal(tex.features, lib.features[pid].astype(float))


def test_constant_library_gives_constant_output():
    R = 12
    patches = [FeaturePatch(np.full((R, R, 3), 0.25), identity_quats(R), np.eye(3), np.ones((R, R), bool),
                            0.0, 2) for _ in range(3)]
    lib = PatchLibrary.from_patches(patches)
    tex = synthesize_planar(lib, 40, 50, seed=0)
    assert np.all(tex.features == 0.25) and tex.filled.all()
    assert seam_discontinuity(tex.features[..., :2], tex.provenance) == 0.0


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_quilting_copies_library_values(seed):
    lib = smooth_library(R=10, n=10)
    tex = synthesize_planar(lib, 27, 31, seed=seed)
    assert tex.filled.all()
    values = {tuple(v) for v in lib.features.reshape(-1, lib.features.shape[-1]).astype(float).tolist()}
    for v in tex.features.reshape(-1, tex.features.shape[-1]).tolist():
        assert tuple(v) in values
    tex.validate()


def test_quilting_deterministic_and_file_roundtrip(tmp_path):
    lib = smooth_library()
    a = synthesize_planar(lib, 50, 50, seed=9)
    b = synthesize_planar(lib, 50, 50, seed=9)
    for x, y in ((a.features, b.features), (a.quat, b.quat), (a.provenance, b.provenance)):
        assert x.tobytes() == y.tobytes()
    write_texture(tmp_path / "t.nrtx", a)
    c = read_texture(tmp_path / "t.nrtx")
    assert np.array_equal(c.features, a.features) and np.array_equal(c.provenance, a.provenance)


def test_matched_quilting_beats_random_paste():
    lib = smooth_library(R=16, n=60)
    m, r = [], []
    for seed in range(3):
        tm = synthesize_planar(lib, 64, 64, seed=seed)
        tr = synthesize_planar(lib, 64, 64, seed=seed, mode="random")
        m.append(seam_discontinuity(tm.features[..., :4], tm.provenance))
        r.append(seam_discontinuity(tr.features[..., :4], tr.provenance))
    assert np.mean(m) <= 0.5 * np.mean(r)


def test_flip_handedness_reaches_texture():
    lib = smooth_library(R=8, n=5)
    tex = synthesize_planar(lib, 20, 20, seed=2)
    expect = lib.handedness[tex.provenance.astype(int), 0, 0]
    assert np.array_equal(tex.handedness, expect)


# --- library build and io ---------------------------------------------------------


def test_build_library_on_plane(tmp_path):
    mesh = grid_plane(1.0, 11)
    lib, rep = build_library(mesh, LinearField(), 30, R=8, rng=np.random.default_rng(0))
    assert lib.size == 4 * rep.accepted
    assert rep.accepted + rep.rejected_misses + rep.rejected_distance == rep.samples
    assert rep.rejected_misses > 0  # centers near the border scan off the plane
    write_library(tmp_path / "lib.bin", lib)
    back = read_library(tmp_path / "lib.bin")
    assert np.array_equal(back.features, lib.features)
    assert np.array_equal(back.quat, lib.quat)
    assert np.array_equal(back.flags, lib.flags)
    assert np.array_equal(back.valid, lib.valid)
    np.testing.assert_allclose(back.T_s, lib.T_s, atol=1e-7)
    assert (back.R, back.dim_f, back.overlap) == (lib.R, lib.dim_f, lib.overlap)


def test_read_library_rejects_garbage(tmp_path):
    from mesotex.synthesis.library import LibraryFormatError

    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(LibraryFormatError):
        read_library(tmp_path / "x")
