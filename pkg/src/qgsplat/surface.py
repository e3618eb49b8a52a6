"""Analytic surface normals and Gaussian curvature at ray-splat hits.

The implicit gradient of sign(s1)/s1^2 x^2 + sign(s2)/s2^2 y^2 - z/s3 gives
the (unnormalized) normal (2 w1 x, 2 w2 y, -1/s3).  With lam_k =
sign(s_k) s3 / s_k^2 the Gaussian curvature of z = lam1 x^2 + lam2 y^2 is
K = 4 lam1 lam2 / (1 + 4 lam1^2 x^2 + 4 lam2^2 y^2)^2 (fundamental forms).
"""

import numpy as np
from numba import njit

from .model import S3_FLAT, sign0


@njit(cache=True)
def normal_local(w1, w2, iw3, x, y, planar):
    """Unit local-frame normal; planar sheets use (0, 0, -1)."""
    if planar:
        return 0.0, 0.0, -1.0
    nx = 2.0 * w1 * x
    ny = 2.0 * w2 * y
    nz = -iw3
    nrm = np.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / nrm, ny / nrm, nz / nrm


@njit(cache=True)
def curvature_local(lam1, lam2, x, y, planar):
    if planar:
        return 0.0
    den = 1.0 + 4.0 * lam1 * lam1 * x * x + 4.0 * lam2 * lam2 * y * y
    return 4.0 * lam1 * lam2 / (den * den)


def lambdas(scales):
    s1, s2, s3 = scales[0], scales[1], scales[2]
    return sign0(s1) * s3 / s1**2, sign0(s2) * s3 / s2**2


def normal_at(scales, R, point_local, view_dir_world=None):
    """World-frame unit normal at a local surface point, flipped toward the
    camera when a world view direction is given."""
    s3 = scales[2]
    planar = abs(s3) < S3_FLAT
    if planar:
        n_loc = np.array([0.0, 0.0, -1.0])
    else:
        w1 = sign0(scales[0]) / scales[0] ** 2
        w2 = sign0(scales[1]) / scales[1] ** 2
        n_loc = np.array([2 * w1 * point_local[0], 2 * w2 * point_local[1], -1.0 / s3])
        n_loc = n_loc / np.linalg.norm(n_loc)
    n_world = R @ n_loc
    if view_dir_world is not None and n_world @ np.asarray(view_dir_world) > 0:
        n_world = -n_world
    return n_world


def curvature_at(scales, point_local):
    """Gaussian curvature at a local surface point; 0 on planar sheets."""
    if abs(scales[2]) < S3_FLAT:
        return 0.0
    lam1, lam2 = lambdas(scales)
    return float(curvature_local(lam1, lam2, point_local[0], point_local[1], False))
