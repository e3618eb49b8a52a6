"""Closed-form ray-paraboloid intersection and the near/far validity rule.

Substituting o + t*d into sign(s1)/s1^2 x^2 + sign(s2)/s2^2 y^2 - z/s3 = 0
gives A t^2 + B t + C = 0 with roots (-B -+ sign(A) sqrt(B^2-4AC)) / (2A)
ordered near/far for either sign of A.  For |A| below A_EPS the quadratic
term is numerically meaningless and the tangent-plane root -C/B is used.
Of the two candidates, the nearer is kept if its geodesic distance lies
within 3 sigma of its azimuth, else the farther one gets the same test,
else the ray misses.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .geodesic import arc_length, sigma_dir
from .model import S3_FLAT

A_EPS = 1e-6
B_EPS = 1e-12
T_NEAR_CLIP = 0.01
RHO_EPS = 1e-12

# branch codes stored per fragment
BR_QUAD = 0
BR_LINEAR = 1
BR_PLANAR = 2


@njit(cache=True)
def ray_coeffs(w1, w2, iw3, ox, oy, oz, dx, dy, dz):
    A = w1 * dx * dx + w2 * dy * dy
    B = 2.0 * (w1 * ox * dx + w2 * oy * dy) - iw3 * dz
    C = w1 * ox * ox + w2 * oy * oy - iw3 * oz
    return A, B, C


@njit(cache=True)
def candidate_depths(A, B, C):
    """(count, t_near, t_far, linear) sorted candidates of the quadratic."""
    if abs(A) < A_EPS:
        if abs(B) < B_EPS:
            return 0, 0.0, 0.0, True
        return 1, -C / B, 0.0, True
    disc = B * B - 4.0 * A * C
    if disc < 0.0:
        return 0, 0.0, 0.0, False
    sa = 1.0 if A > 0.0 else -1.0
    sq = np.sqrt(disc)
    tn = (-B - sa * sq) / (2.0 * A)
    tf = (-B + sa * sq) / (2.0 * A)
    if disc == 0.0:
        return 1, tn, 0.0, False
    return 2, tn, tf, False


@njit(cache=True)
def fragment_geometry(w1, w2, iw3, s1, s2, s3, ox, oy, oz, dx, dy, dz,
                      planar, euclid, t_clip):
    """Select the valid hit for one local ray.

    Returns (valid, t, x, y, rho, cth, sth, a, l, sig, G, branch).
    """
    if planar:
        if abs(dz) < B_EPS:
            return False, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, BR_PLANAR
        t = -oz / dz
        if t <= t_clip:
            return False, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, BR_PLANAR
        x = ox + t * dx
        y = oy + t * dy
        rho = np.sqrt(x * x + y * y)
        if rho > RHO_EPS:
            cth = x / rho
            sth = y / rho
        else:
            cth, sth = 1.0, 0.0
        sig = sigma_dir(s1, s2, cth, sth)
        l = rho
        if l > 3.0 * sig:
            return False, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, BR_PLANAR
        G = np.exp(-(l * l) / (2.0 * sig * sig))
        return True, t, x, y, rho, cth, sth, 0.0, l, sig, G, BR_PLANAR

    A, B, C = ray_coeffs(w1, w2, iw3, ox, oy, oz, dx, dy, dz)
    cnt, t0, t1, linear = candidate_depths(A, B, C)
    branch = BR_LINEAR if linear else BR_QUAD
    s1s2 = s1 * s2
    for k in range(cnt):
        t = t0 if k == 0 else t1
        if t <= t_clip:
            continue
        x = ox + t * dx
        y = oy + t * dy
        # geodesic length >= straight radius, so points outside the
        # euclidean 3-sigma contour ellipse cannot pass the selection
        # test; reject them before the arc-length transcendentals
        # (rho > 3 sigma(theta)  <=>  (s2 x)^2 + (s1 y)^2 > 9 (s1 s2)^2)
        m = (s2 * x) * (s2 * x) + (s1 * y) * (s1 * y)
        if m > 9.0 * s1s2 * s1s2:
            continue
        rho = np.sqrt(x * x + y * y)
        if rho > RHO_EPS:
            cth = x / rho
            sth = y / rho
        else:
            cth, sth = 1.0, 0.0
        a = s3 * (w1 * cth * cth + w2 * sth * sth)
        l = rho if euclid else arc_length(a, rho)
        sig = sigma_dir(s1, s2, cth, sth)
        if l <= 3.0 * sig:
            G = np.exp(-(l * l) / (2.0 * sig * sig))
            return True, t, x, y, rho, cth, sth, a, l, sig, G, branch
    return False, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, branch


@dataclass
class Intersection:
    t: float
    point: np.ndarray      # local (x, y, z)
    rho: float
    theta: float
    geodesic_l: float
    sigma_at_theta: float
    weight: float
    branch: int


def primitive_coeffs(scales):
    """(w1, w2, iw3, planar) for activated scales."""
    s1, s2, s3 = float(scales[0]), float(scales[1]), float(scales[2])
    w1 = (1.0 if s1 >= 0 else -1.0) / (s1 * s1)
    w2 = (1.0 if s2 >= 0 else -1.0) / (s2 * s2)
    planar = abs(s3) < S3_FLAT
    iw3 = 0.0 if planar else 1.0 / s3
    return w1, w2, iw3, planar


def intersect(scales, o_hat, d_hat):
    """Candidate depths (ascending) of a local ray against the surface."""
    w1, w2, iw3, planar = primitive_coeffs(scales)
    o, d = np.asarray(o_hat, float), np.asarray(d_hat, float)
    if planar:
        if abs(d[2]) < B_EPS:
            return []
        return [-o[2] / d[2]]
    A, B, C = ray_coeffs(w1, w2, iw3, o[0], o[1], o[2], d[0], d[1], d[2])
    cnt, t0, t1, _ = candidate_depths(A, B, C)
    return [t0, t1][:cnt]


def select_valid(scales, o_hat, d_hat, t_clip=T_NEAR_CLIP, euclidean=False):
    """Apply the near-then-far 3 sigma rule; None when the ray misses."""
    s1, s2, s3 = float(scales[0]), float(scales[1]), float(scales[2])
    w1, w2, iw3, planar = primitive_coeffs(scales)
    o, d = np.asarray(o_hat, float), np.asarray(d_hat, float)
    out = fragment_geometry(w1, w2, iw3, s1, s2, s3, o[0], o[1], o[2],
                            d[0], d[1], d[2], planar, euclidean, t_clip)
    valid, t, x, y, rho, cth, sth, a, l, sig, G, branch = out
    if not valid:
        return None
    z = 0.0 if planar else a * rho * rho
    theta = np.arctan2(sth, cth) % (2 * np.pi)
    return Intersection(t=t, point=np.array([x, y, z]), rho=rho, theta=theta,
                        geodesic_l=l, sigma_at_theta=sig, weight=G, branch=branch)
