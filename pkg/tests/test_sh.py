import numpy as np
import pytest

from qgsplat import sh
from oracles import central_diff


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_degree0_constant_color():
    coeffs = np.zeros((1, 3, 1))
    coeffs[0, :, 0] = sh.rgb_to_sh0([0.2, 0.5, 0.9])
    for d in ([1, 0, 0], [0.3, -0.4, 0.866]):
        c, _ = sh.eval_color(coeffs, unit(d)[None])
        assert np.allclose(c[0], [0.2, 0.5, 0.9], atol=1e-12)


def test_clamp_blocks_gradient():
    coeffs = np.zeros((1, 3, 1))
    coeffs[0, 0, 0] = -10.0  # strongly negative red channel
    dirs = unit([0, 0, 1])[None]
    c, clamped = sh.eval_color(coeffs, dirs)
    assert c[0, 0] == 0.0 and clamped[0, 0]
    g_sh, g_dir = sh.eval_color_backward(coeffs, dirs, clamped, np.ones((1, 3)))
    assert g_sh[0, 0, 0] == 0.0
    assert g_sh[0, 1, 0] == pytest.approx(sh.C0)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_basis_grad_matches_fd(degree):
    rng = np.random.default_rng(degree)
    for _ in range(5):
        d = unit(rng.normal(size=3))
        g = sh.basis_grad(degree, d[None])[0]
        for k in range(sh.n_coeffs(degree)):
            fd = central_diff(lambda x, k=k: sh.basis(degree, x[None])[0, k], d, 1e-6)
            assert np.allclose(g[k], fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_eval_color_backward_matches_fd(degree):
    rng = np.random.default_rng(10 + degree)
    n = 4
    coeffs = rng.normal(size=(n, 3, sh.n_coeffs(degree))) * 0.2
    coeffs[:, :, 0] += 1.0  # keep colors positive so the clamp stays off
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    w = rng.normal(size=(n, 3))

    colors, clamped = sh.eval_color(coeffs, dirs)
    assert not clamped.any()
    g_sh, g_dir = sh.eval_color_backward(coeffs, dirs, clamped, w)

    def f_coeffs(flat):
        c, _ = sh.eval_color(flat.reshape(coeffs.shape), dirs)
        return float(np.sum(w * c))

    fd = central_diff(f_coeffs, coeffs.ravel(), 1e-6).reshape(coeffs.shape)
    assert np.allclose(g_sh, fd, rtol=1e-6, atol=1e-8)

    # direction gradient checked on the unnormalized basis chain
    def f_dirs(flat):
        c, _ = sh.eval_color(coeffs, flat.reshape(dirs.shape))
        return float(np.sum(w * c))

    fd_dir = central_diff(f_dirs, dirs.ravel(), 1e-6).reshape(dirs.shape)
    assert np.allclose(g_dir, fd_dir, rtol=1e-5, atol=1e-8)
