"""Synthetic scenes with analytic ground truth.

Each scene is an implicit surface that is ray-traced exactly: posed
images, depth maps (distance along the unit pixel ray), camera-frame
normal maps and coverage masks all follow analytically, which makes these
scenes usable as oracles for end-to-end fitting.  Deterministic per seed.
"""

import os

import numpy as np

from . import io_maps
from .cameras import Camera, look_at, save_cameras

SCENES = ("sphere", "dish", "saddle", "box")
TEXTURES = ("checker", "perlin", "flat")


def _checker(pts, period=0.35):
    ids = np.floor(pts / period).sum(axis=-1) % 2
    base = np.array([0.85, 0.25, 0.2])
    alt = np.array([0.92, 0.88, 0.82])
    return np.where(ids[..., None] > 0.5, alt, base)


class _ValueNoise:
    """Seeded trilinear value noise with a couple of octaves."""

    def __init__(self, seed, size=32):
        rng = np.random.default_rng(seed)
        self.grid = rng.uniform(0, 1, (size, size, size))
        self.size = size

    def _sample(self, p):
        g = self.grid
        n = self.size
        q = np.mod(p, n)
        i0 = np.floor(q).astype(int) % n
        i1 = (i0 + 1) % n
        f = q - np.floor(q)
        f = f * f * (3 - 2 * f)

        def at(ix, iy, iz):
            return g[ix % n, iy % n, iz % n]

        x0, y0, z0 = i0[..., 0], i0[..., 1], i0[..., 2]
        x1, y1, z1 = i1[..., 0], i1[..., 1], i1[..., 2]
        fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
        c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx
        c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx
        c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx
        c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def __call__(self, pts):
        v = (self._sample(pts * 6.0) * 0.65 + self._sample(pts * 13.0) * 0.35)
        lo = np.array([0.15, 0.3, 0.55])
        hi = np.array([0.95, 0.8, 0.35])
        return lo + (hi - lo) * v[..., None]


def make_texture(kind, seed=0):
    if kind == "checker":
        return _checker
    if kind == "perlin":
        return _ValueNoise(seed)
    if kind == "flat":
        return lambda pts: np.broadcast_to(np.array([0.7, 0.55, 0.35]),
                                           pts.shape[:-1] + (3,)).copy()
    raise ValueError(f"unknown texture {kind!r} (choose from {TEXTURES})")


def _nearest_positive(roots, valid, eps=1e-9):
    """Smallest root > eps among the candidates (stacked on axis 0)."""
    t = np.where(valid & (roots > eps), roots, np.inf)
    return t.min(axis=0)


def _trace_sphere(o, d, radius=1.0):
    b = np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - radius * radius
    disc = b * b - c
    ok = disc >= 0
    sq = np.sqrt(np.maximum(disc, 0))
    t = _nearest_positive(np.stack([-b - sq, -b + sq]), np.stack([ok, ok]))
    hit = np.isfinite(t)
    t = np.where(hit, t, 0.0)
    p = o + t[..., None] * d
    n = p / radius
    return t, p, n, hit


def _quadratic_roots(A, B, C):
    lin = np.abs(A) < 1e-12
    disc = B * B - 4 * A * C
    ok = (disc >= 0) & ~lin
    sq = np.sqrt(np.maximum(disc, 0))
    As = np.where(lin, 1.0, A)
    r1 = np.where(lin, -C / np.where(np.abs(B) < 1e-12, np.inf, B), (-B - sq) / (2 * As))
    r2 = np.where(lin, np.inf, (-B + sq) / (2 * As))
    v1 = np.where(lin, np.abs(B) >= 1e-12, ok)
    v2 = ~lin & ok
    return np.stack([r1, r2]), np.stack([v1, v2])


def _trace_dish(o, d, curvature=0.8, rim=1.1):
    A = curvature * (d[..., 0] ** 2 + d[..., 1] ** 2)
    B = 2 * curvature * (o[..., 0] * d[..., 0] + o[..., 1] * d[..., 1]) - d[..., 2]
    C = curvature * (o[..., 0] ** 2 + o[..., 1] ** 2) - o[..., 2]
    roots, valid = _quadratic_roots(A, B, C)
    finite = np.isfinite(roots)
    pts = o[None] + np.where(finite, roots, 0.0)[..., None] * d[None]
    inside = (np.hypot(pts[..., 0], pts[..., 1]) <= rim) & finite
    t = _nearest_positive(roots, valid & inside)
    hit = np.isfinite(t)
    t = np.where(hit, t, 0.0)
    p = o + t[..., None] * d
    n = np.stack([2 * curvature * p[..., 0], 2 * curvature * p[..., 1],
                  -np.ones_like(t)], axis=-1)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    return t, p, n, hit


def _trace_saddle(o, d, k=0.6, half=1.0):
    A = k * (d[..., 0] ** 2 - d[..., 1] ** 2)
    B = 2 * k * (o[..., 0] * d[..., 0] - o[..., 1] * d[..., 1]) - d[..., 2]
    C = k * (o[..., 0] ** 2 - o[..., 1] ** 2) - o[..., 2]
    roots, valid = _quadratic_roots(A, B, C)
    finite = np.isfinite(roots)
    pts = o[None] + np.where(finite, roots, 0.0)[..., None] * d[None]
    inside = (np.abs(pts[..., 0]) <= half) & (np.abs(pts[..., 1]) <= half) & finite
    t = _nearest_positive(roots, valid & inside)
    hit = np.isfinite(t)
    t = np.where(hit, t, 0.0)
    p = o + t[..., None] * d
    n = np.stack([2 * k * p[..., 0], -2 * k * p[..., 1], -np.ones_like(t)], axis=-1)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    return t, p, n, hit


def _trace_box(o, d, half=1.6):
    ts = []
    ns = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            denom = np.where(np.abs(d[..., axis]) < 1e-12, np.inf, d[..., axis])
            t = (sign * half - o[..., axis]) / denom
            p = o + t[..., None] * d
            others = [a for a in range(3) if a != axis]
            ok = ((t > 1e-9)
                  & (np.abs(p[..., others[0]]) <= half + 1e-9)
                  & (np.abs(p[..., others[1]]) <= half + 1e-9))
            ts.append(np.where(ok, t, np.inf))
            n = np.zeros(3)
            n[axis] = -sign  # inward
            ns.append(n)
    ts = np.stack(ts)
    idx = ts.argmin(axis=0)
    t = ts.min(axis=0)
    hit = np.isfinite(t)
    t = np.where(hit, t, 0.0)
    p = o + t[..., None] * d
    n = np.asarray(ns)[idx]
    return t, p, n, hit


_TRACERS = {"sphere": _trace_sphere, "dish": _trace_dish,
            "saddle": _trace_saddle, "box": _trace_box}


def camera_ring(n, radius, height, res, focal_factor=1.1, target=(0, 0, 0),
                phase=0.0):
    cams = []
    focal = res * focal_factor
    for i in range(n):
        ang = 2 * np.pi * i / n + phase
        eye = np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cams.append(Camera(fx=focal, fy=focal, cx=res / 2, cy=res / 2,
                           width=res, height=res,
                           world_to_camera=look_at(eye, target),
                           image=f"images/{i:03d}.png"))
    return cams


def scene_cameras(name, n_views, res, phase=0.0):
    if name == "sphere":
        lo = camera_ring((n_views + 1) // 2, 3.2, 1.0, res, phase=phase)
        hi = camera_ring(n_views // 2, 2.9, 2.0, res, phase=phase + 0.37)
        return lo + hi
    if name == "dish":
        return camera_ring(n_views, 2.1, 2.6, res, phase=phase)
    if name == "saddle":
        return camera_ring(n_views, 2.3, 2.2, res, phase=phase)
    if name == "box":
        return camera_ring(n_views, 0.45, 0.1, res, focal_factor=0.8,
                           target=(0, 0, 0.0), phase=phase)
    raise ValueError(f"unknown scene {name!r} (choose from {SCENES})")


def render_view(name, cam, texture):
    tracer = _TRACERS[name]
    dirs_cam = cam.pixel_dirs_cam()
    dirs = dirs_cam @ cam.R_cw.T
    o = np.broadcast_to(cam.center, dirs.shape)
    if name == "box":
        t, p, n, hit = tracer(o, dirs)
    else:
        t, p, n, hit = tracer(np.ascontiguousarray(o), dirs)
    rgb = np.where(hit[..., None], texture(p), 0.0)
    n_cam = n @ cam.R_wc.T
    facing = np.sum(n_cam * dirs_cam, axis=-1) > 0
    n_cam = np.where(facing[..., None], -n_cam, n_cam)
    n_cam = np.where(hit[..., None], n_cam, 0.0)
    depth = np.where(hit, t, 0.0)
    return rgb, depth, n_cam, hit


def make_scene(name, n_views, res, seed=0, texture="checker", phase=0.0):
    """(cams, images, depths, normals, masks) for a synthetic scene."""
    tex = make_texture(texture, seed=seed)
    cams = scene_cameras(name, n_views, res, phase=phase)
    images, depths, normals, masks = [], [], [], []
    for cam in cams:
        rgb, depth, n_cam, hit = render_view(name, cam, tex)
        images.append(rgb)
        depths.append(depth)
        normals.append(n_cam)
        masks.append(hit)
    return cams, images, depths, normals, masks


def write_dataset(out_dir, cams, images, depths=None, normals=None):
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    for i, (cam, img) in enumerate(zip(cams, images)):
        cam.image = f"images/{i:03d}.png"
        io_maps.save_png(os.path.join(out_dir, cam.image), img)
    save_cameras(os.path.join(out_dir, "cameras.json"), cams)
    if depths is not None:
        os.makedirs(os.path.join(out_dir, "depth"), exist_ok=True)
        for i, d in enumerate(depths):
            io_maps.save_f32(os.path.join(out_dir, "depth", f"{i:03d}.f32"), d)
    if normals is not None:
        os.makedirs(os.path.join(out_dir, "normal"), exist_ok=True)
        for i, n in enumerate(normals):
            io_maps.save_f32(os.path.join(out_dir, "normal", f"{i:03d}.f32"), n)
