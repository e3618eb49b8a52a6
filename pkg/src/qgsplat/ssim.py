"""SSIM with an 11x11 Gaussian window (sigma 1.5) and its input gradient.

Maps are built from zero-padded same-size separable convolutions and the
window radius is cropped off before averaging, which makes the cropped
region identical to the usual gaussian-weighted SSIM regardless of the
padding rule, and keeps the adjoint of every convolution equal to itself
(symmetric kernel).
"""

import numpy as np
from scipy.ndimage import correlate1d

WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _kernel():
    r = WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * SIGMA * SIGMA))
    return k / k.sum()


_K = _kernel()


def _blur(img):
    out = correlate1d(img, _K, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _K, axis=1, mode="constant", cval=0.0)


def _channels(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None]
    return img


def ssim(x, y, return_grad=False):
    """Mean SSIM over the valid (crop) region, averaged over channels.

    With return_grad, also returns dSSIM/dx of the same shape as x.
    """
    xc = _channels(x)
    yc = _channels(y)
    if xc.shape != yc.shape:
        raise ValueError("image shapes differ")
    r = WINDOW // 2
    H, W, C = xc.shape
    if H < WINDOW or W < WINDOW:
        raise ValueError("image smaller than the SSIM window")
    crop = (slice(r, H - r), slice(r, W - r))
    n_valid = (H - 2 * r) * (W - 2 * r) * C

    total = 0.0
    grad = np.zeros_like(xc) if return_grad else None
    for c in range(C):
        xi, yi = xc[:, :, c], yc[:, :, c]
        ux, uy = _blur(xi), _blur(yi)
        uxx, uyy, uxy = _blur(xi * xi), _blur(yi * yi), _blur(xi * yi)
        vx = uxx - ux * ux
        vy = uyy - uy * uy
        vxy = uxy - ux * uy
        A1 = 2 * ux * uy + C1
        A2 = 2 * vxy + C2
        B1 = ux * ux + uy * uy + C1
        B2 = vx + vy + C2
        S = (A1 * A2) / (B1 * B2)
        total += S[crop].sum()
        if not return_grad:
            continue
        M = np.zeros((H, W))
        M[crop] = 1.0 / n_valid
        # S as a function of (ux, Sxx=uxx, Sxy=uxy); uy-side terms constant
        d_ux = (2 * uy * B1 - A1 * 2 * ux) / (B1 * B1) * (A2 / B2) \
            + (A1 / B1) * (-2 * uy * B2 - A2 * (-2 * ux)) / (B2 * B2)
        d_uxx = (A1 / B1) * (-A2 / (B2 * B2))
        d_uxy = (A1 / B1) * (2 / B2)
        grad[:, :, c] = (_blur(M * d_ux) + 2 * xi * _blur(M * d_uxx)
                         + yi * _blur(M * d_uxy))
    value = total / n_valid
    if return_grad:
        return value, grad if np.asarray(x).ndim == 3 else grad[:, :, 0]
    return value
