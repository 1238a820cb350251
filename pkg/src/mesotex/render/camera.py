"""Pinhole cameras (OpenCV axes: x right, y down, z forward) and the cameras JSON format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray  # 4x4 world-from-camera

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        pose = np.array(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError("pose must be a 4x4 matrix")
        R = pose[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6:
            raise ValueError("pose rotation is not orthonormal")
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        return self.pose[:3, 2]

    def to_dict(self) -> dict:
        return {"intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                               "width": self.width, "height": self.height},
                "pose": self.pose.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        k = d["intrinsics"]
        return cls(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]), int(k["width"]),
                   int(k["height"]), np.asarray(d["pose"], dtype=np.float64))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera pose whose +z axis points from ``eye`` to ``target``."""
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, fwd, eye
    return pose


def camera_from_fov(width: int, height: int, fov_deg: float, pose) -> Camera:
    f = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
    return Camera(f, f, width / 2.0, height / 2.0, width, height, pose)


def pixel_rays(cam: Camera, u, v):
    """Rays through image-plane coordinates (u, v) in pixels (pixel centers sit at integer + 0.5)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    local = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=1)
    d = local @ cam.pose[:3, :3].T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(cam.center, d.shape).copy()
    return o, d


def generate_rays(cam: Camera):
    """Row-major (height*width) origins and unit directions through pixel centers."""
    jj, ii = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    return pixel_rays(cam, jj.reshape(-1), ii.reshape(-1))


def write_cameras_json(path, cameras, image_paths: Optional[list] = None) -> None:
    items = []
    for i, cam in enumerate(cameras):
        d = cam.to_dict()
        d["image"] = None if image_paths is None else str(image_paths[i])
        items.append(d)
    Path(path).write_text(json.dumps(items, indent=1))


def read_cameras_json(path):
    """Returns (cameras, image paths resolved against the JSON's directory, or None)."""
    items = json.loads(Path(path).read_text())
    if not isinstance(items, list):
        raise ValueError(f"{path}: expected a list of camera records")
    base = Path(path).parent
    cams, images = [], []
    for it in items:
        cams.append(Camera.from_dict(it))
        img = it.get("image")
        images.append(None if img is None else str(base / img) if not Path(img).is_absolute() else img)
    return cams, images
