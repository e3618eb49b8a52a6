import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qgsplat import geodesic as gd
from oracles import quad_arc_length


def test_arc_length_planar_limit_exact():
    assert gd.arc_length(0.0, 1.5) == 1.5


def test_arc_length_reference_value():
    # integral 0..1 sqrt(1 + t^2) dt, frozen from adaptive quadrature
    assert gd.arc_length(0.5, 1.0) == pytest.approx(1.1477935746, abs=1e-9)
    assert quad_arc_length(0.5, 1.0)[0] == pytest.approx(gd.arc_length(0.5, 1.0), rel=1e-12)


def test_arc_length_even_in_a():
    assert gd.arc_length(-0.5, 1.0) == pytest.approx(gd.arc_length(0.5, 1.0), rel=1e-14)


def test_arc_length_rejects_negative_rho():
    with pytest.raises(ValueError):
        gd.arc_length_arr(1.0, -0.1)


def test_arc_length_vs_quadrature_grid():
    a = np.linspace(-10, 10, 120)
    rho = np.linspace(0, 5, 120)
    A, R = np.meshgrid(a, rho)
    mine = gd.arc_length_arr(A.ravel(), R.ravel())
    ref = quad_arc_length(A.ravel(), R.ravel())
    err = np.abs(mine - ref) / np.maximum(1.0, np.abs(ref))
    assert err.max() <= 1e-8


def test_branch_agreement_at_switch():
    # closed form and series evaluated at the same u near the threshold
    for rho in (0.3, 1.0, 4.0):
        u = gd.U_SERIES
        a = u / (2 * rho)
        r = np.sqrt(u * u + 1)
        closed = (np.log(r + u) + u * r) / (4 * a)
        series = rho * (1 + u * u / 6 - u**4 / 40)
        assert abs(closed - series) <= 1e-12 * closed


def test_degenerate_limit():
    rho = np.linspace(1e-3, 5, 50)
    for a in (1e-4, -1e-4, 1e-6):
        l = gd.arc_length_arr(a, rho)
        assert np.all(np.abs(l - rho) <= 1e-6 * rho)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 5), st.floats(1e-6, 5))
def test_arc_length_monotone_and_lower_bound(a, rho, drho):
    l0 = gd.arc_length(a, rho)
    l1 = gd.arc_length(a, rho + drho)
    assert l1 > l0
    assert l0 >= rho * (1 - 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, -1e-6) | st.floats(1e-6, 10), st.floats(1e-4, 5))
def test_arc_length_grad_matches_fd(a, rho):
    l, dla, dlr = gd.arc_length_grad(a, rho)
    h = 1e-6 * max(1.0, abs(a))
    fd_a = (gd.arc_length(a + h, rho) - gd.arc_length(a - h, rho)) / (2 * h)
    h = 1e-6 * max(1.0, rho)
    fd_r = (gd.arc_length(a, rho + h) - gd.arc_length(a, rho - h)) / (2 * h)
    assert dla == pytest.approx(fd_a, rel=2e-5, abs=1e-7)
    assert dlr == pytest.approx(fd_r, rel=2e-5, abs=1e-9)


def test_sigma_isotropic_and_axes():
    for th in np.linspace(0, 2 * np.pi, 9):
        assert gd.sigma_dir(0.7, 0.7, np.cos(th), np.sin(th)) == pytest.approx(0.7, rel=1e-12)
    assert gd.sigma_dir(2.0, 1.0, 1.0, 0.0) == pytest.approx(2.0)
    assert gd.sigma_dir(2.0, 1.0, 0.0, 1.0) == pytest.approx(1.0)


def test_sigma_diagonal_value():
    # bisection on the contour ellipse rho^2 cos^2/s1^2 + rho^2 sin^2/s2^2 = 1
    s1, s2, th = 2.0, 1.0, np.pi / 4

    def on_ellipse(rho):
        return rho**2 * np.cos(th) ** 2 / s1**2 + rho**2 * np.sin(th) ** 2 / s2**2 - 1

    lo, hi = 0.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if on_ellipse(mid) < 0:
            lo = mid
        else:
            hi = mid
    assert gd.sigma_dir(s1, s2, np.cos(th), np.sin(th)) == pytest.approx(lo, rel=1e-10)
    assert gd.sigma_dir(s1, s2, np.cos(th), np.sin(th)) == pytest.approx(1.264911, abs=1e-6)


def test_sigma_uses_magnitudes():
    v = gd.sigma_dir(2.0, 1.0, np.cos(0.3), np.sin(0.3))
    assert gd.sigma_dir(-2.0, 1.0, np.cos(0.3), np.sin(0.3)) == pytest.approx(v)
    assert gd.sigma_dir(2.0, -1.0, np.cos(0.3), np.sin(0.3)) == pytest.approx(v)


@settings(max_examples=150, deadline=None)
@given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(0, 2 * np.pi))
def test_sigma_grad_matches_fd(s1, s2, th):
    c, s = np.cos(th), np.sin(th)
    sig, d1, d2, dc, ds = gd.sigma_dir_grad(s1, s2, c, s)
    h = 1e-6
    assert d1 == pytest.approx(
        (gd.sigma_dir(s1 + h, s2, c, s) - gd.sigma_dir(s1 - h, s2, c, s)) / (2 * h),
        rel=1e-4, abs=1e-8)
    assert dc == pytest.approx(
        (gd.sigma_dir(s1, s2, c + h, s) - gd.sigma_dir(s1, s2, c - h, s)) / (2 * h),
        rel=1e-4, abs=1e-8)


def test_gaussian_weight_center_and_planar():
    assert gd.gaussian_weight(1.0, 1.0, 1.0, 0.0, 0.0) == 1.0
    # nearly-flat primitive behaves like a euclidean 2D gaussian
    g = gd.gaussian_weight(1.0, 1.0, 1e-9, 1.0, 0.0)
    assert g == pytest.approx(np.exp(-0.5), rel=1e-12)


def test_gaussian_weight_curved_value():
    # a(0)=1: l from quadrature, then exponentiate
    l = quad_arc_length(1.0, 1.0)[0]
    expect = np.exp(-l * l / 2.0)
    assert gd.gaussian_weight(1.0, 1.0, 1.0, 1.0, 0.0) == pytest.approx(expect, rel=1e-10)
    assert l == pytest.approx(1.478943, abs=1e-6)
    assert expect == pytest.approx(0.334996, abs=1e-6)


def test_gaussian_weight_c0_across_flat_switch():
    flat = 1e-6
    for rho in (0.5, 1.0, 2.5):
        lo = gd.gaussian_weight(1.0, 0.8, flat * 0.99, rho, 0.3, s3_flat=flat)
        hi = gd.gaussian_weight(1.0, 0.8, flat * 1.01, rho, 0.3, s3_flat=flat)
        assert abs(hi - lo) <= 1e-5


def test_gaussian_weight_euclidean_ablation():
    g = gd.gaussian_weight(1.0, 1.0, 1.0, 1.0, 0.0, euclidean=True)
    assert g == pytest.approx(np.exp(-0.5), rel=1e-12)


def test_approx_arc_length_values():
    assert gd.approx_arc_length(1.0, 1.0) == pytest.approx(10.0 / 7.0, rel=1e-15)
    assert gd.approx_arc_length(0.0, 7.0) == pytest.approx(6.0, rel=1e-15)
    assert gd.approx_arc_length(0.1, 2.0) == pytest.approx((1.6 + 12.0) / 7.0, rel=1e-12)
    # the approximation sits below the true arc length here
    assert gd.approx_arc_length(0.1, 2.0) < quad_arc_length(0.1, 2.0)[0]


def test_approx_underestimates_on_grid():
    a = np.linspace(-10, 10, 100)
    rho = np.linspace(0, 5, 100)
    A, R = np.meshgrid(a, rho)
    approx = (4 * np.abs(A) * R * R + 6 * R) / 7
    exact = gd.arc_length_arr(A.ravel(), R.ravel()).reshape(A.shape)
    assert np.all(approx <= exact + 1e-12)


def test_solve_radius_values():
    r = gd.solve_radius_for_sigma(1.0, 1.0)
    assert r == pytest.approx(0.770691, abs=1e-6)
    assert gd.approx_arc_length(1.0, r) == pytest.approx(1.0, abs=1e-9)
    assert gd.solve_radius_for_sigma(0.0, 3.0) == pytest.approx(3.5, rel=1e-15)
    assert gd.solve_radius_for_sigma(1e-12, 3.0) == pytest.approx(3.5, rel=1e-9)
    r = gd.solve_radius_for_sigma(0.5, 2.0)
    assert r == pytest.approx((-6 + np.sqrt(148.0)) / 4.0, rel=1e-12)
    assert gd.approx_arc_length(0.5, r) == pytest.approx(2.0, abs=1e-9)


def test_solve_radius_rejects_nonpositive_sigma():
    from qgsplat.model import ParameterError
    with pytest.raises(ParameterError):
        gd.support_radius(1.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(1e-3, 10))
def test_solve_radius_inverts_approx(a, sigma0):
    r = gd.solve_radius_for_sigma(a, sigma0)
    assert gd.approx_arc_length(a, r) == pytest.approx(sigma0, rel=1e-7)
