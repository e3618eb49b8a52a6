"""Real spherical harmonics for view-dependent color, degrees 0..3.

Same basis and constants as the common splatting codebases; colors are
C0*sh0 + ... + 0.5, clamped at zero by the caller.
"""

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def n_coeffs(degree):
    return (degree + 1) ** 2


def basis(degree, dirs):
    """SH basis values, shape (N, (degree+1)^2); dirs must be unit."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.empty((len(d), n_coeffs(degree)))
    out[:, 0] = C0
    if degree >= 1:
        out[:, 1] = -C1 * y
        out[:, 2] = C1 * z
        out[:, 3] = -C1 * x
    if degree >= 2:
        out[:, 4] = C2[0] * x * y
        out[:, 5] = C2[1] * y * z
        out[:, 6] = C2[2] * (2 * z * z - x * x - y * y)
        out[:, 7] = C2[3] * x * z
        out[:, 8] = C2[4] * (x * x - y * y)
    if degree >= 3:
        out[:, 9] = C3[0] * y * (3 * x * x - y * y)
        out[:, 10] = C3[1] * x * y * z
        out[:, 11] = C3[2] * y * (4 * z * z - x * x - y * y)
        out[:, 12] = C3[3] * z * (2 * z * z - 3 * x * x - 3 * y * y)
        out[:, 13] = C3[4] * x * (4 * z * z - x * x - y * y)
        out[:, 14] = C3[5] * z * (x * x - y * y)
        out[:, 15] = C3[6] * x * (x * x - 3 * y * y)
    return out


def basis_grad(degree, dirs):
    """d(basis)/d(dir), shape (N, K, 3)."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    zero = np.zeros_like(x)
    g = np.zeros((len(d), n_coeffs(degree), 3))
    if degree >= 1:
        g[:, 1] = np.stack([zero, -C1 + zero, zero], axis=-1)
        g[:, 2] = np.stack([zero, zero, C1 + zero], axis=-1)
        g[:, 3] = np.stack([-C1 + zero, zero, zero], axis=-1)
    if degree >= 2:
        g[:, 4] = np.stack([C2[0] * y, C2[0] * x, zero], axis=-1)
        g[:, 5] = np.stack([zero, C2[1] * z, C2[1] * y], axis=-1)
        g[:, 6] = np.stack([-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z], axis=-1)
        g[:, 7] = np.stack([C2[3] * z, zero, C2[3] * x], axis=-1)
        g[:, 8] = np.stack([2 * C2[4] * x, -2 * C2[4] * y, zero], axis=-1)
    if degree >= 3:
        g[:, 9] = np.stack([6 * C3[0] * x * y, C3[0] * (3 * x * x - 3 * y * y), zero], axis=-1)
        g[:, 10] = np.stack([C3[1] * y * z, C3[1] * x * z, C3[1] * x * y], axis=-1)
        g[:, 11] = np.stack([-2 * C3[2] * x * y,
                             C3[2] * (4 * z * z - x * x - 3 * y * y),
                             8 * C3[2] * y * z], axis=-1)
        g[:, 12] = np.stack([-6 * C3[3] * x * z, -6 * C3[3] * y * z,
                             C3[3] * (6 * z * z - 3 * x * x - 3 * y * y)], axis=-1)
        g[:, 13] = np.stack([C3[4] * (4 * z * z - 3 * x * x - y * y),
                             -2 * C3[4] * x * y, 8 * C3[4] * x * z], axis=-1)
        g[:, 14] = np.stack([2 * C3[5] * x * z, -2 * C3[5] * y * z,
                             C3[5] * (x * x - y * y)], axis=-1)
        g[:, 15] = np.stack([C3[6] * (3 * x * x - 3 * y * y),
                             -6 * C3[6] * x * y, zero], axis=-1)
    return g


def eval_color(sh_coeffs, dirs):
    """(colors, clamp_mask): SH color + 0.5 clamped at 0, per primitive."""
    deg = int(round(np.sqrt(sh_coeffs.shape[2]))) - 1
    B = basis(deg, dirs)
    raw = np.einsum("nck,nk->nc", sh_coeffs, B) + 0.5
    clamped = raw < 0
    return np.where(clamped, 0.0, raw), clamped


def eval_color_backward(sh_coeffs, dirs, clamped, g_color):
    """(g_sh, g_dir) for eval_color; clamped channels pass no gradient."""
    deg = int(round(np.sqrt(sh_coeffs.shape[2]))) - 1
    g = np.where(clamped, 0.0, g_color)
    B = basis(deg, dirs)
    g_sh = np.einsum("nc,nk->nck", g, B)
    dB = basis_grad(deg, dirs)
    g_dir = np.einsum("nc,nck,nkd->nd", g, sh_coeffs, dB)
    return g_sh, g_dir


def rgb_to_sh0(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0
