"""Screen-space bounding boxes for primitives.

loose_bbox projects a conservative local box around the 3-sigma geodesic
support; tight_bbox additionally projects the tangent-plane frustum of the
paraboloid and intersects the two pixel boxes.  Both come with the
guarantee that every pixel whose ray hits the support (weight >=
exp(-9/2)) lands inside, provided the primitive is fully in front of the
camera; primitives straddling the near plane conservatively cover the
whole image.
"""

from dataclasses import dataclass

import numpy as np

from .geodesic import solve_radius_for_sigma
from .model import S3_FLAT, sign0

TILE = 16

# minimum |curvature| for the frustum construction; flatter axes make the
# tangent intercepts ill-conditioned and the loose box is used instead
A_TIGHT_MIN = 1e-9


@dataclass
class ScreenBBox:
    min_px: np.ndarray  # (u, v) inclusive
    max_px: np.ndarray
    empty: bool = False

    @property
    def tile_range(self):
        """((tx0, ty0), (tx1, ty1)) inclusive 16x16 tile indices."""
        if self.empty:
            return (0, 0), (-1, -1)
        return ((self.min_px[0] // TILE, self.min_px[1] // TILE),
                (self.max_px[0] // TILE, self.max_px[1] // TILE))

    def area(self):
        if self.empty:
            return 0
        return ((self.max_px[0] - self.min_px[0] + 1)
                * (self.max_px[1] - self.min_px[1] + 1))

    def contains(self, u, v):
        return (not self.empty and self.min_px[0] <= u <= self.max_px[0]
                and self.min_px[1] <= v <= self.max_px[1])


def _empty():
    return ScreenBBox(np.zeros(2, int), -np.ones(2, int), empty=True)


def _full(cam):
    return ScreenBBox(np.zeros(2, int),
                      np.array([cam.width - 1, cam.height - 1]), empty=False)


def axis_coeffs(scales):
    """Signed per-axis curvature coefficients (a(0), a(pi/2))."""
    s1, s2, s3 = scales
    w1 = (1.0 if s1 >= 0 else -1.0) / (s1 * s1)
    w2 = (1.0 if s2 >= 0 else -1.0) / (s2 * s2)
    return s3 * w1, s3 * w2


def _z_support_bound(scales):
    """Upper bound on |a(theta)| * rho_hat(theta)^2 over all directions."""
    s1, s2, s3 = np.abs(scales)
    a0, a1 = np.abs(axis_coeffs(scales))
    smax, smin = max(s1, s2), min(s1, s2)
    amax = max(a0, a1)
    rho_low = solve_radius_for_sigma(amax, 3.0 * smin)
    return max(0.0, (21.0 * smax - 6.0 * rho_low) / 4.0)


def support_box_local(scales):
    """Conservative local-frame AABB corners (8, 3) of the 3-sigma support."""
    s1, s2, s3 = scales
    if abs(s3) < S3_FLAT:
        r1, r2 = 3.0 * abs(s1), 3.0 * abs(s2)
        zlo = zhi = 0.0
    else:
        a0, a1 = axis_coeffs(scales)
        # along directions where a crosses zero the support reaches the
        # euclidean 3-sigma ellipse, so the radius solve must use min |a|
        amin = 0.0 if a0 * a1 < 0 else min(abs(a0), abs(a1))
        r1 = solve_radius_for_sigma(amin, 3.0 * abs(s1))
        r2 = solve_radius_for_sigma(amin, 3.0 * abs(s2))
        zb = _z_support_bound(scales)
        zlo = -zb if (a0 < 0 or a1 < 0) else 0.0
        zhi = zb if (a0 > 0 or a1 > 0) else 0.0
    corners = np.array([[sx * r1, sy * r2, z]
                        for sx in (-1, 1) for sy in (-1, 1) for z in (zlo, zhi)])
    return corners


def frustum_local(scales):
    """Vertices (8, 3) of the truncated tangent-plane pyramid, or None when
    the construction degenerates (hyperbolic or near-flat axes)."""
    s1, s2, s3 = scales
    if abs(s3) < S3_FLAT:
        return None
    a0, a1 = axis_coeffs(scales)
    if a0 * a1 <= 0 or min(abs(a0), abs(a1)) < A_TIGHT_MIN:
        return None
    zsign = 1.0 if a0 > 0 else -1.0
    a0, a1 = abs(a0), abs(a1)
    rho1 = solve_radius_for_sigma(a0, 3.0 * abs(s1))
    rho2 = solve_radius_for_sigma(a1, 3.0 * abs(s2))
    h = max(_z_support_bound(scales), a0 * rho1 * rho1, a1 * rho2 * rho2)
    # tangent plane at (rho_k, a_k rho_k^2) meets z=0 at rho_k/2 and height
    # h at (h/a_k + rho_k^2) / (2 rho_k)
    x1t = (h / a0 + rho1 * rho1) / (2.0 * rho1)
    x2t = (h / a1 + rho2 * rho2) / (2.0 * rho2)
    verts = [[sx * rho1 / 2, sy * rho2 / 2, 0.0] for sx in (-1, 1) for sy in (-1, 1)]
    verts += [[sx * x1t, sy * x2t, zsign * h] for sx in (-1, 1) for sy in (-1, 1)]
    return np.array(verts)


def project_points_bbox(pts_world, cam, z_eps=1e-6):
    """Pixel AABB of projected world points; None when clipped by the near
    plane (conservative full-image fallback), empty box when all behind."""
    pc = cam.to_cam(pts_world)
    z = pc[:, 2]
    if np.all(z <= z_eps):
        return _empty()
    if np.any(z <= z_eps):
        return _full(cam)
    u = cam.fx * pc[:, 0] / z + cam.cx
    v = cam.fy * pc[:, 1] / z + cam.cy
    lo_u = int(np.floor(u.min() - 0.5))
    hi_u = int(np.ceil(u.max() - 0.5))
    lo_v = int(np.floor(v.min() - 0.5))
    hi_v = int(np.ceil(v.max() - 0.5))
    lo_u, hi_u = max(lo_u, 0), min(hi_u, cam.width - 1)
    lo_v, hi_v = max(lo_v, 0), min(hi_v, cam.height - 1)
    if lo_u > hi_u or lo_v > hi_v:
        return _empty()
    return ScreenBBox(np.array([lo_u, lo_v]), np.array([hi_u, hi_v]))


def _to_world(corners, center, R):
    return corners @ R.T + center


def loose_bbox(scales, center, R, cam):
    return project_points_bbox(_to_world(support_box_local(scales), center, R), cam)


def tight_bbox(scales, center, R, cam):
    loose = loose_bbox(scales, center, R, cam)
    verts = frustum_local(scales)
    if verts is None or loose.empty:
        return loose
    fr = project_points_bbox(_to_world(verts, center, R), cam)
    if fr.empty:
        return fr
    lo = np.maximum(loose.min_px, fr.min_px)
    hi = np.minimum(loose.max_px, fr.max_px)
    if np.any(lo > hi):
        return _empty()
    return ScreenBBox(lo, hi)


def _support_corners_batch(scales):
    """Vectorized support_box_local, (P, 8, 3)."""
    P = len(scales)
    s1, s2, s3 = np.abs(scales[:, 0]), np.abs(scales[:, 1]), np.abs(scales[:, 2])
    a0 = scales[:, 2] * sign0(scales[:, 0]) / scales[:, 0] ** 2
    a1 = scales[:, 2] * sign0(scales[:, 1]) / scales[:, 1] ** 2
    planar = s3 < S3_FLAT
    amin = np.where(a0 * a1 < 0, 0.0, np.minimum(np.abs(a0), np.abs(a1)))
    amax = np.maximum(np.abs(a0), np.abs(a1))

    def solve(a, sig):
        return 14.0 * sig / (6.0 + np.sqrt(36.0 + 112.0 * a * sig))

    r1 = np.where(planar, 3.0 * s1, solve(amin, 3.0 * s1))
    r2 = np.where(planar, 3.0 * s2, solve(amin, 3.0 * s2))
    smax, smin = np.maximum(s1, s2), np.minimum(s1, s2)
    zb = np.maximum(0.0, (21.0 * smax - 6.0 * solve(amax, 3.0 * smin)) / 4.0)
    zlo = np.where(planar, 0.0, np.where((a0 < 0) | (a1 < 0), -zb, 0.0))
    zhi = np.where(planar, 0.0, np.where((a0 > 0) | (a1 > 0), zb, 0.0))
    corners = np.empty((P, 8, 3))
    i = 0
    for sx in (-1, 1):
        for sy in (-1, 1):
            for zz in (zlo, zhi):
                corners[:, i, 0] = sx * r1
                corners[:, i, 1] = sy * r2
                corners[:, i, 2] = zz
                i += 1
    return corners


def _frustum_corners_batch(scales):
    """Vectorized frustum_local: corners (P, 8, 3) and a validity mask."""
    P = len(scales)
    s1, s2, s3 = np.abs(scales[:, 0]), np.abs(scales[:, 1]), np.abs(scales[:, 2])
    a0s = scales[:, 2] * sign0(scales[:, 0]) / scales[:, 0] ** 2
    a1s = scales[:, 2] * sign0(scales[:, 1]) / scales[:, 1] ** 2
    ok = (s3 >= S3_FLAT) & (a0s * a1s > 0) \
        & (np.minimum(np.abs(a0s), np.abs(a1s)) >= A_TIGHT_MIN)
    zsign = np.where(a0s > 0, 1.0, -1.0)
    a0 = np.where(ok, np.abs(a0s), 1.0)
    a1 = np.where(ok, np.abs(a1s), 1.0)

    def solve(a, sig):
        return 14.0 * sig / (6.0 + np.sqrt(36.0 + 112.0 * a * sig))

    rho1 = solve(a0, 3.0 * s1)
    rho2 = solve(a1, 3.0 * s2)
    smax, smin = np.maximum(s1, s2), np.minimum(s1, s2)
    zb = np.maximum(0.0, (21.0 * smax - 6.0 * solve(np.maximum(a0, a1), 3.0 * smin)) / 4.0)
    h = np.maximum(zb, np.maximum(a0 * rho1**2, a1 * rho2**2))
    x1t = (h / a0 + rho1 * rho1) / (2.0 * rho1)
    x2t = (h / a1 + rho2 * rho2) / (2.0 * rho2)
    corners = np.empty((P, 8, 3))
    i = 0
    for sx in (-1, 1):
        for sy in (-1, 1):
            corners[:, i, 0] = sx * rho1 / 2
            corners[:, i, 1] = sy * rho2 / 2
            corners[:, i, 2] = 0.0
            corners[:, i + 4, 0] = sx * x1t
            corners[:, i + 4, 1] = sy * x2t
            corners[:, i + 4, 2] = zsign * h
            i += 1
    return corners, ok


def _project_bbox_batch(corners_world, cam, z_eps=1e-6):
    """Pixel AABBs (P, 4) as (umin, umax, vmin, vmax); empty = (0,-1,0,-1)."""
    P = len(corners_world)
    pc = corners_world @ cam.R_wc.T + cam.t_wc
    z = pc[:, :, 2]
    front = z > z_eps
    all_front = front.all(axis=1)
    any_front = front.any(axis=1)
    zs = np.where(front, z, 1.0)
    u = cam.fx * pc[:, :, 0] / zs + cam.cx
    v = cam.fy * pc[:, :, 1] / zs + cam.cy
    big = 1e18
    u_ok = np.where(front, u, big)
    v_ok = np.where(front, v, big)
    lo_u = np.floor(u_ok.min(axis=1) - 0.5)
    lo_v = np.floor(v_ok.min(axis=1) - 0.5)
    u_ok = np.where(front, u, -big)
    v_ok = np.where(front, v, -big)
    hi_u = np.ceil(u_ok.max(axis=1) - 0.5)
    hi_v = np.ceil(v_ok.max(axis=1) - 0.5)

    out = np.empty((P, 4), dtype=np.int64)
    lo_u = np.clip(lo_u, 0, cam.width - 1)
    hi_u = np.clip(hi_u, 0, cam.width - 1)
    lo_v = np.clip(lo_v, 0, cam.height - 1)
    hi_v = np.clip(hi_v, 0, cam.height - 1)
    out[:, 0] = lo_u
    out[:, 1] = hi_u
    out[:, 2] = lo_v
    out[:, 3] = hi_v
    # straddling the near plane: conservatively cover the whole image
    straddle = any_front & ~all_front
    out[straddle] = (0, cam.width - 1, 0, cam.height - 1)
    empty = ~any_front | (out[:, 0] > out[:, 1]) | (out[:, 2] > out[:, 3])
    out[empty] = (0, -1, 0, -1)
    return out


def tight_bboxes_batch(scales, centers, R, cam):
    """Vectorized tight_bbox over a primitive set; same results as the
    scalar path, (P, 4) int as (umin, umax, vmin, vmax)."""
    loose_c = _support_corners_batch(scales)
    world = np.einsum("pij,pkj->pki", R, loose_c) + centers[:, None, :]
    loose = _project_bbox_batch(world, cam)
    fr_c, ok = _frustum_corners_batch(scales)
    world = np.einsum("pij,pkj->pki", R, fr_c) + centers[:, None, :]
    fr = _project_bbox_batch(world, cam)
    out = loose.copy()
    use = ok & (loose[:, 0] <= loose[:, 1]) & (fr[:, 0] <= fr[:, 1])
    out[use, 0] = np.maximum(loose[use, 0], fr[use, 0])
    out[use, 1] = np.minimum(loose[use, 1], fr[use, 1])
    out[use, 2] = np.maximum(loose[use, 2], fr[use, 2])
    out[use, 3] = np.minimum(loose[use, 3], fr[use, 3])
    dead = ok & ((fr[:, 0] > fr[:, 1]) | (fr[:, 2] > fr[:, 3])) \
        & (loose[:, 0] <= loose[:, 1])
    out[dead] = (0, -1, 0, -1)
    bad = (out[:, 0] > out[:, 1]) | (out[:, 2] > out[:, 3])
    out[bad] = (0, -1, 0, -1)
    return out
