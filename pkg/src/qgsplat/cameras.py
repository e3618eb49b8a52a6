"""Pinhole cameras and the cameras.json interchange format.

Conventions: OpenCV-style camera frame (x right, y down, z forward), pixel
(u, v) = (column, row) with the ray of pixel (u, v) passing through
((u+0.5-cx)/fx, (v+0.5-cy)/fy, 1).  Depth maps store Euclidean distance
along the unit ray, not the z coordinate.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray  # 4x4 row-major rigid transform
    image: str = ""

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        R = self.R_wc
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("world_to_camera rotation is not orthonormal")

    @property
    def R_wc(self):
        return self.world_to_camera[:3, :3]

    @property
    def t_wc(self):
        return self.world_to_camera[:3, 3]

    @property
    def R_cw(self):
        return self.R_wc.T

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R_wc.T @ self.t_wc

    def pixel_dirs_cam(self):
        """Unit ray directions in the camera frame, shape (H, W, 3)."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def ray_world(self, u, v):
        """World-frame (origin, unit direction) of the ray through pixel
        center (u, v); u, v may be floats in pixel units."""
        d = np.array([(u + 0.5 - self.cx) / self.fx,
                      (v + 0.5 - self.cy) / self.fy, 1.0])
        d /= np.linalg.norm(d)
        return self.center, self.R_cw @ d

    def to_cam(self, pts_world):
        pts = np.asarray(pts_world, dtype=np.float64)
        return pts @ self.R_wc.T + self.t_wc

    def project(self, pts_world):
        """(u, v, z) continuous pixel coordinates and camera-frame depth z."""
        pc = self.to_cam(pts_world)
        z = pc[..., 2]
        u = self.fx * pc[..., 0] / z + self.cx
        v = self.fy * pc[..., 1] / z + self.cy
        return u, v, z

    def to_record(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": int(self.width), "height": int(self.height),
            "world_to_camera": self.world_to_camera.tolist(),
            "image": self.image,
        }

    @staticmethod
    def from_record(rec):
        return Camera(fx=rec["fx"], fy=rec["fy"], cx=rec["cx"], cy=rec["cy"],
                      width=rec["width"], height=rec["height"],
                      world_to_camera=np.array(rec["world_to_camera"]),
                      image=rec.get("image", ""))


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """world_to_camera matrix for a camera at eye looking toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])  # rows: camera axes in world coords
    w2c = np.eye(4)
    w2c[:3, :3] = R
    w2c[:3, 3] = -R @ eye
    return w2c


def save_cameras(path, cams):
    with open(path, "w") as f:
        json.dump([c.to_record() for c in cams], f, indent=1)


def load_cameras(path):
    with open(path) as f:
        recs = json.load(f)
    return [Camera.from_record(r) for r in recs]


def scene_extent(cams):
    """Radius of the bounding sphere of the camera centers."""
    centers = np.array([c.center for c in cams])
    mid = 0.5 * (centers.min(axis=0) + centers.max(axis=0))
    return float(np.linalg.norm(centers - mid, axis=1).max())


def neighbor_views(cams, ref_idx, k=2, min_baseline_deg=15.0, target=None):
    """Indices of the k nearest cameras by center distance whose viewing
    directions toward the target differ by at least min_baseline_deg."""
    ref = cams[ref_idx]
    if target is None:
        target = np.zeros(3)
    v_ref = target - ref.center
    v_ref = v_ref / (np.linalg.norm(v_ref) + 1e-12)
    scored = []
    for j, c in enumerate(cams):
        if j == ref_idx:
            continue
        v = target - c.center
        v = v / (np.linalg.norm(v) + 1e-12)
        ang = np.degrees(np.arccos(np.clip(v @ v_ref, -1, 1)))
        if ang >= min_baseline_deg:
            scored.append((np.linalg.norm(c.center - ref.center), j))
    scored.sort()
    return [j for _, j in scored[:k]]
