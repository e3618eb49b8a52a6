"""Geodesic arc length on a paraboloid and the on-surface Gaussian density.

A paraboloid in its local frame is z = a(theta) * rho^2 in cylindrical
coordinates.  The radial section through the vertex is the geodesic to the
vertex, so the geodesic distance of a surface point (rho, theta) is the arc
length of the parabola z = a*rho^2 between 0 and rho, which has a closed
form.  Everything here is scalar numba code (shared with the rasterizer
kernels) plus thin numpy wrappers.
"""

import numpy as np
from numba import njit

# Series / closed-form switch for u = 2*a*rho; below this the closed form
# cancels catastrophically and a Taylor expansion is exact to ~1e-14.
U_SERIES = 1e-3

# |a| below this counts as a flat section when inverting the quadratic
# bound approximation.
A_FLAT = 1e-8


@njit(cache=True)
def arc_length(a, rho):
    """Arc length of z = a*t^2 for t in [0, rho].  Even in a, >= rho."""
    u = 2.0 * a * rho
    if abs(u) < U_SERIES:
        u2 = u * u
        return rho * (1.0 + u2 / 6.0 - u2 * u2 / 40.0)
    r = np.sqrt(u * u + 1.0)
    return (np.log(r + u) + u * r) / (4.0 * a)


@njit(cache=True)
def arc_length_grad(a, rho):
    """(l, dl/da, dl/drho), matching the branch taken by arc_length."""
    u = 2.0 * a * rho
    if abs(u) < U_SERIES:
        u2 = u * u
        l = rho * (1.0 + u2 / 6.0 - u2 * u2 / 40.0)
        dl_da = rho * rho * (2.0 * u / 3.0 - u * u * u / 5.0)
        dl_drho = 1.0 + u2 / 2.0 - u2 * u2 / 8.0
        return l, dl_da, dl_drho
    r = np.sqrt(u * u + 1.0)
    l = (np.log(r + u) + u * r) / (4.0 * a)
    dl_da = (rho * r - l) / a
    dl_drho = r
    return l, dl_da, dl_drho


@njit(cache=True)
def sigma_dir(s1, s2, cth, sth):
    """Std-dev of the surface Gaussian along direction (cos, sin) of theta.

    Radius of the contour ellipse with semi-axes |s1|, |s2|; signs of the
    scales only steer curvature, so magnitudes are used.
    """
    m = (s2 * cth) * (s2 * cth) + (s1 * sth) * (s1 * sth)
    return abs(s1 * s2) / np.sqrt(m)


@njit(cache=True)
def sigma_dir_grad(s1, s2, cth, sth):
    """(sigma, d/ds1, d/ds2, d/dcth, d/dsth)."""
    m = (s2 * cth) * (s2 * cth) + (s1 * sth) * (s1 * sth)
    sig = abs(s1 * s2) / np.sqrt(m)
    d_s1 = sig * (1.0 / s1 - s1 * sth * sth / m)
    d_s2 = sig * (1.0 / s2 - s2 * cth * cth / m)
    d_cth = -sig * s2 * s2 * cth / m
    d_sth = -sig * s1 * s1 * sth / m
    return sig, d_s1, d_s2, d_cth, d_sth


@njit(cache=True)
def approx_arc_length(a, rho):
    """Quadratic under-estimate of arc_length used for support bounds."""
    return (4.0 * abs(a) * rho * rho + 6.0 * rho) / 7.0


@njit(cache=True)
def solve_radius_for_sigma(a, sigma0):
    """Positive root of approx_arc_length(a, rho) = sigma0.

    Evaluated as 14*sigma0 / (6 + sqrt(36 + 112|a|sigma0)), the
    cancellation-free form of (-6 + sqrt(36 + 112|a|sigma0)) / (8|a|);
    the flat limit 7*sigma0/6 falls out at a = 0.  Since the quadratic
    approximation underestimates the true arc length, the returned radius
    overestimates the true equi-geodesic radius, which is what a
    conservative bounding box needs.
    """
    return 14.0 * sigma0 / (6.0 + np.sqrt(36.0 + 112.0 * abs(a) * sigma0))


def support_radius(a, sigma0):
    """Validating wrapper around solve_radius_for_sigma."""
    from .model import ParameterError

    if not sigma0 > 0:
        raise ParameterError(f"sigma0 must be positive, got {sigma0}")
    return solve_radius_for_sigma(a, sigma0)


def curvature_coeff(s1, s2, s3, theta):
    """a(theta) = s3*(sign(s1)cos^2/s1^2 + sign(s2)sin^2/s2^2)."""
    c, s = np.cos(theta), np.sin(theta)
    return s3 * (np.sign(s1) * c * c / s1**2 + np.sign(s2) * s * s / s2**2)


def arc_length_arr(a, rho):
    """Vectorized arc_length.  rho must be >= 0."""
    a = np.asarray(a, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("rho must be non-negative")
    u = 2.0 * a * rho
    u2 = u * u
    small = np.abs(u) < U_SERIES
    r = np.sqrt(u2 + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        closed = (np.log(r + u) + u * r) / (4.0 * a)
    series = rho * (1.0 + u2 / 6.0 - u2 * u2 / 40.0)
    return np.where(small, series, closed)


def gaussian_weight(s1, s2, s3, rho, theta, *, s3_flat=1e-6, euclidean=False):
    """On-surface Gaussian density at cylindrical point (rho, theta).

    Planar primitives (|s3| < s3_flat) and the euclidean ablation use the
    straight-line radius in place of the geodesic length.
    """
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("rho must be non-negative")
    cth, sth = np.cos(theta), np.sin(theta)
    m = (s2 * cth) ** 2 + (s1 * sth) ** 2
    sig = np.abs(s1 * s2) / np.sqrt(m)
    if euclidean or abs(s3) < s3_flat:
        l = rho
    else:
        a = curvature_coeff(s1, s2, s3, theta)
        l = arc_length_arr(a, rho)
    return np.exp(-(l * l) / (2.0 * sig * sig))
