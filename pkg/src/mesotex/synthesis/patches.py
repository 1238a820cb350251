"""Implicit latent patches scanned off the base surface, and their flip augmentations."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from ..geometry.bvh import Bvh, build_bvh, raycast_batch
from ..geometry.mesh import TriangleMesh
from ..shading.normals import matrix_to_quat

DEFAULT_R = 128
MAX_DISTANCE_RATIO = 0.5
MISS_TOLERANCE = 0.1

FLIP_H = 1  # texel columns mirrored, T_s tangent negated
FLIP_V = 2  # texel rows mirrored, T_s bitangent negated
FLIP_MATRICES = {0: np.eye(3), FLIP_H: np.diag([-1.0, 1.0, 1.0]), FLIP_V: np.diag([1.0, -1.0, 1.0]),
                 FLIP_H | FLIP_V: np.diag([-1.0, -1.0, 1.0])}


@dataclass
class FeaturePatch:
    """R x R latent tile. Texel (i, j) sits at center + (j - R/2 + 0.5) h t + (i - R/2 + 0.5) h b.

    ``quat`` holds the proper part of the residual Q = T_s^T T_c per texel; a patch mirrored an odd
    number of times has improper residuals, recorded once in ``flags``.
    """

    features: np.ndarray   # (R, R, C)
    quat: np.ndarray       # (R, R, 4) scalar-last
    T_s: np.ndarray        # (3, 3) columns (t, b, n)
    valid: np.ndarray      # (R, R) bool, texels whose ray hit the surface
    mean_distance: float
    dim_f: int
    flags: int = 0
    source: int = -1

    @property
    def R(self) -> int:
        return self.features.shape[0]

    @property
    def handedness(self) -> int:
        h = (-1 if self.flags & FLIP_H else 1) * (-1 if self.flags & FLIP_V else 1)
        return h

    def residual_matrices(self) -> np.ndarray:
        from ..shading.normals import quat_to_matrix

        R = self.R
        h = np.full(R * R, self.handedness, dtype=np.int8)
        return quat_to_matrix(self.quat.reshape(-1, 4), h).reshape(R, R, 3, 3)


def scan_grid(center, frame, R: int, world_size: float) -> np.ndarray:
    """(R, R, 3) texel-center positions on the tangent plane."""
    h = world_size / R
    off = (np.arange(R) - R / 2 + 0.5) * h
    t, b = frame[:, 0], frame[:, 1]
    return (np.asarray(center)[None, None, :] + off[None, :, None] * t[None, None, :]
            + off[:, None, None] * b[None, None, :])


def extract_patch(mesh: TriangleMesh, bvh: Optional[Bvh], field, center, frame, R: int = DEFAULT_R,
                  world_size: float = 1.0, max_distance_ratio: float = MAX_DISTANCE_RATIO,
                  miss_tolerance: float = MISS_TOLERANCE):
    """Scan one patch; returns (FeaturePatch or None, reason) with reason in {"ok", "misses", "distance"}.

    Rays leave the tangent plane lifted by ``world_size`` along the frame normal, so surface on either
    side of the plane is reached; ray distance is measured from the plane itself.
    """
    bvh = bvh if bvh is not None else build_bvh(mesh)
    frame = np.asarray(frame, dtype=np.float64)
    n = frame[:, 2]
    grid = scan_grid(center, frame, R, world_size).reshape(-1, 3)
    lift = world_size
    origins = grid + lift * n
    dirs = np.broadcast_to(-n, origins.shape).copy()
    face, t, bary = raycast_batch(bvh, mesh, origins, dirs, 2.0 * lift)
    hit = face >= 0
    if (~hit).mean() > miss_tolerance:
        return None, "misses"
    dist = np.abs(t[hit] - lift)
    if dist.max() > max_distance_ratio * world_size:
        return None, "distance"
    x_c = mesh.point_on_face(face[hit], bary[hit])
    f, fh = field.features(x_c)
    dim_f = f.shape[1]
    C = dim_f + fh.shape[1]
    feats = np.zeros((R * R, C))
    feats[hit, :dim_f] = f
    feats[hit, dim_f:] = fh
    Q = np.einsum("ji,njk->nik", frame, mesh.face_frames[face[hit]])  # T_s^T T_c
    q = canonical_quat(matrix_to_quat(Q)[0])
    quat = np.zeros((R * R, 4))
    quat[:, 3] = 1.0
    quat[hit] = q
    feats = feats.reshape(R, R, C)
    quat = quat.reshape(R, R, 4)
    valid = hit.reshape(R, R)
    if not valid.all():
        # misses take the nearest hit texel so every texel can be matched and copied
        _, (ii, jj) = ndimage.distance_transform_edt(~valid, return_indices=True)
        feats = feats[ii, jj]
        quat = quat[ii, jj]
    return FeaturePatch(feats, quat, frame.copy(), valid, float(dist.mean()), dim_f), "ok"


def canonical_quat(q: np.ndarray) -> np.ndarray:
    """Pick the sign of q with w > 0 (or the first nonzero of w, x, y, z positive); clears -0.0."""
    q = np.asarray(q, dtype=np.float64)
    order = q[..., [3, 0, 1, 2]]
    nz = order != 0
    first = np.take_along_axis(order, np.argmax(nz, axis=-1)[..., None], axis=-1)
    return q * np.where(first < 0, -1.0, 1.0) + 0.0


def quat_mul(a, b):
    """Hamilton product of scalar-last quaternions."""
    ax, ay, az, aw = (a[..., k] for k in range(4))
    bx, by, bz, bw = (b[..., k] for k in range(4))
    return np.stack([aw * bx + ax * bw + ay * bz - az * by,
                     aw * by - ax * bz + ay * bw + az * bx,
                     aw * bz + ax * by - ay * bx + az * bw,
                     aw * bw - ax * bx - ay * by - az * bz], axis=-1)


_QI = np.array([1.0, 0.0, 0.0, 0.0])
_QJ = np.array([0.0, 1.0, 0.0, 0.0])


def _flip_quat(q: np.ndarray, flags: int) -> np.ndarray:
    """Proper part of M P diag(1, -1, 1) as a quaternion.

    diag(-1, 1, 1) = -R_x(pi) and diag(1, -1, 1) = -R_y(pi), so the flipped proper part is
    R_x(pi) P R_y(pi) (horizontal) or R_y(pi) P R_y(pi) (vertical). Multiplying by axis
    quaternions only permutes and negates components, so the result is exact.
    """
    if flags & FLIP_H:
        q = quat_mul(quat_mul(_QI, q), _QJ)
    if flags & FLIP_V:
        q = quat_mul(quat_mul(_QJ, q), _QJ)
    return canonical_quat(q)


def flip_patch(patch: FeaturePatch, flags: int) -> FeaturePatch:
    """Mirror texels and the matching T_s axes; the residual becomes M Q with M the axis flip."""
    F, q, v = patch.features, patch.quat, patch.valid
    if flags & FLIP_H:
        F, q, v = F[:, ::-1], q[:, ::-1], v[:, ::-1]
    if flags & FLIP_V:
        F, q, v = F[::-1], q[::-1], v[::-1]
    if flags:
        q = _flip_quat(q, flags)
    M = FLIP_MATRICES[flags]
    return replace(patch, features=np.ascontiguousarray(F).copy(), quat=np.ascontiguousarray(q).copy(),
                   valid=np.ascontiguousarray(v).copy(), T_s=patch.T_s @ M, flags=patch.flags ^ flags)


def augment_flips(patch: FeaturePatch) -> list[FeaturePatch]:
    """Identity, horizontal, vertical and both flips, in that order."""
    return [flip_patch(patch, f) for f in (0, FLIP_H, FLIP_V, FLIP_H | FLIP_V)]
