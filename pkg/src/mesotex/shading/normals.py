"""Fine-normal assembly in a tangent frame and the residual-frame transport used for texture mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


def local_direction(theta, phi_vec):
    """R(theta, phi) = (sin t cos p, sin t sin p, cos t) with (cos p, sin p) given as a 2-vector."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    pv = np.asarray(phi_vec, dtype=np.float64).reshape(-1, 2)
    st = np.sin(theta)
    return np.stack([st * pv[:, 0], st * pv[:, 1], np.cos(theta)], axis=1)


def phi_to_vec(phi):
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    return np.stack([np.cos(phi), np.sin(phi)], axis=1)


def quat_to_matrix(quat, handedness=None):
    """Residual matrices Q from (x, y, z, w) unit quaternions; negative handedness mirrors the local y axis."""
    Q = Rotation.from_quat(np.atleast_2d(quat)).as_matrix()
    if handedness is not None:
        h = np.asarray(handedness, dtype=np.float64).reshape(-1)
        Q = Q * np.stack([np.ones_like(h), h, np.ones_like(h)], axis=1)[:, None, :]
    return Q


def matrix_to_quat(Q):
    """Inverse of :func:`quat_to_matrix`; returns (quat, handedness) for proper or improper orthogonal Q."""
    Q = np.array(Q, dtype=np.float64)
    if Q.ndim == 2:
        Q = Q[None]
    h = np.where(np.linalg.det(Q) < 0, -1.0, 1.0)
    P = Q * np.stack([np.ones_like(h), h, np.ones_like(h)], axis=1)[:, None, :]
    q = Rotation.from_matrix(P).as_quat()
    q = q * np.where(q[:, 3:4] < 0, -1.0, 1.0)  # canonical sign w >= 0
    return q, h.astype(np.int8)


@dataclass
class FrameTransport:
    """Per-point residual Q = T_s^-1 T_c (quaternion + handedness) and destination frames T~_c (n, 3, 3)."""

    quat: np.ndarray
    handedness: np.ndarray
    target_frames: np.ndarray

    def __post_init__(self):
        self.quat = np.atleast_2d(np.asarray(self.quat, dtype=np.float64))
        norms = np.linalg.norm(self.quat, axis=1)
        if np.any(np.abs(norms - 1) > 1e-6):
            raise ValueError("residual quaternions must have unit norm")
        self.handedness = np.asarray(self.handedness).reshape(-1)
        self.target_frames = np.asarray(self.target_frames, dtype=np.float64).reshape(-1, 3, 3)

    @classmethod
    def identity(cls, frames) -> "FrameTransport":
        frames = np.asarray(frames, dtype=np.float64).reshape(-1, 3, 3)
        q = np.zeros((len(frames), 4))
        q[:, 3] = 1.0
        return cls(q, np.ones(len(frames), dtype=np.int8), frames)

    def matrices(self) -> np.ndarray:
        """T~_c Q per point."""
        return self.target_frames @ quat_to_matrix(self.quat, self.handedness)


def assemble_fine_normal(theta, phi_vec, frames):
    """n_f = M R(theta, phi) where ``frames`` is (n, 3, 3) M = T~_c Q or a :class:`FrameTransport`."""
    M = frames.matrices() if isinstance(frames, FrameTransport) else np.asarray(frames, dtype=np.float64)
    R = local_direction(theta, phi_vec)
    n = np.einsum("nij,nj->ni", M.reshape(-1, 3, 3), R)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def fine_normal_backward(theta, phi_vec, frames, grad_n):
    """dL/dtheta and dL/dphi_vec for n_f = M R (M orthogonal, so no renormalization term)."""
    M = frames.matrices() if isinstance(frames, FrameTransport) else np.asarray(frames, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    pv = np.asarray(phi_vec, dtype=np.float64).reshape(-1, 2)
    gl = np.einsum("nji,nj->ni", M.reshape(-1, 3, 3), grad_n)  # M^T g
    st, ct = np.sin(theta), np.cos(theta)
    g_theta = gl[:, 0] * ct * pv[:, 0] + gl[:, 1] * ct * pv[:, 1] - gl[:, 2] * st
    g_pv = np.stack([gl[:, 0] * st, gl[:, 1] * st], axis=1)
    return g_theta, g_pv
