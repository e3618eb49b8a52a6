"""Training objectives: photometric, depth distortion, curvature-guided
normal consistency, and the weighted total.

Each term returns its value together with the gradients it induces on the
rendered maps, which the rasterizer backward then chains to primitive
parameters.  The depth-derived normal N is a pseudo ground truth: no
gradient flows through it.  The curvature guidance weight uses
lambda_K = 1 - sigmoid(ln(|K| + eps)), which simplifies to
1 / (1 + |K| + eps).
"""

from dataclasses import dataclass

import numpy as np

from . import ssim as ssim_mod


@dataclass
class LossWeights:
    lambda_d: float = 1000.0
    lambda_n: float = 0.05
    lambda_mv: float = 0.05
    lambda_photo_ssim: float = 0.2
    eps_curvature: float = 1e-6

    def __post_init__(self):
        vals = (self.lambda_d, self.lambda_n, self.lambda_mv,
                self.lambda_photo_ssim, self.eps_curvature)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("loss weights must be finite and non-negative")
        if not 0 <= self.lambda_photo_ssim <= 1:
            raise ValueError("lambda_photo_ssim must lie in [0, 1]")


def photometric(render, gt, lambda_photo_ssim=0.2):
    """(1-m)*L1 + m*(1 - SSIM); returns (value, d/d render)."""
    render = np.asarray(render, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if render.shape != gt.shape:
        raise ValueError(f"image shapes differ: {render.shape} vs {gt.shape}")
    diff = render - gt
    l1 = np.abs(diff).mean()
    g = np.sign(diff) / diff.size * (1.0 - lambda_photo_ssim)
    if lambda_photo_ssim > 0:
        s, gs = ssim_mod.ssim(render, gt, return_grad=True)
        value = (1 - lambda_photo_ssim) * l1 + lambda_photo_ssim * (1.0 - s)
        g = g - lambda_photo_ssim * gs
    else:
        value = l1
    return value, g


def depth_distortion(distortion_map):
    """Mean per-pixel pairwise depth spread; upstream is uniform."""
    d = np.asarray(distortion_map, dtype=np.float64)
    return d.mean(), np.full_like(d, 1.0 / d.size)


def depth_to_normal(depth, alpha, cam, alpha_thresh=0.5):
    """Normals from central differences of back-projected depth.

    depth holds distance along the unit pixel ray (the median depth map);
    pixels are valid when they and their four neighbors carry alpha above
    the threshold and positive depth.  Returns (N, mask) in the camera
    frame with N camera-facing.
    """
    H, W = depth.shape
    dirs = cam.pixel_dirs_cam()
    P = depth[:, :, None] * dirs
    ok = (alpha > alpha_thresh) & (depth > 0)
    N = np.zeros((H, W, 3))
    mask = np.zeros((H, W), dtype=bool)
    du = P[1:-1, 2:] - P[1:-1, :-2]
    dv = P[2:, 1:-1] - P[:-2, 1:-1]
    n = np.cross(du, dv)
    nn = np.linalg.norm(n, axis=-1)
    valid = (ok[1:-1, 1:-1] & ok[1:-1, 2:] & ok[1:-1, :-2]
             & ok[2:, 1:-1] & ok[:-2, 1:-1] & (nn > 1e-12))
    n = np.where(valid[:, :, None], n / np.maximum(nn, 1e-12)[:, :, None], 0.0)
    # orient toward the camera
    flip = np.sum(n * dirs[1:-1, 1:-1], axis=-1) > 0
    n = np.where(flip[:, :, None], -n, n)
    N[1:-1, 1:-1] = n
    mask[1:-1, 1:-1] = valid
    return N, mask


def lambda_curvature(K, eps):
    """1 - sigmoid(ln(|K| + eps)) == 1 / (1 + |K| + eps)."""
    return 1.0 / (1.0 + np.abs(K) + eps)


def curvature_guided_normal_consistency(alpha, normal_map, curv_map, N, mask,
                                        eps_curvature=1e-6, guided=True):
    """Per-pixel lambda_K(K) * sum_i omega_i (1 - n_i . N), blended form.

    Returns (value, d_alpha, d_normal, d_curvature).  N and mask are
    treated as constants; the guidance weight is differentiated through
    the rendered curvature map.
    """
    m = mask.astype(np.float64)
    count = max(m.sum(), 1.0)
    ln = alpha - np.sum(normal_map * N, axis=-1)
    if guided:
        lam = lambda_curvature(curv_map, eps_curvature)
        dlam = -np.sign(curv_map) * lam * lam
    else:
        lam = np.ones_like(curv_map)
        dlam = np.zeros_like(curv_map)
    value = np.sum(m * lam * ln) / count
    d_alpha = m * lam / count
    d_normal = -(m * lam / count)[:, :, None] * N
    d_curv = m * dlam * ln / count
    return value, d_alpha, d_normal, d_curv


def total_loss(l_c, l_d, l_kn, l_mv, weights: LossWeights):
    return (l_c + weights.lambda_d * l_d + weights.lambda_n * l_kn
            + weights.lambda_mv * l_mv)
