"""Multi-view reprojection + NCC regularization between two rendered views.

For a reference pixel with rendered depth and normal, the local plane
induces the homography H_rn = K_n (R_rn + T_rn n^T / (n^T X)) K_r^{-1}.
The loss is the forward-backward reprojection error ||p - H_nr H_rn p||
(H_nr built from the neighbor's rendered plane sampled at the warped
point) plus 1 - NCC between the reference patch and the warped neighbor
patch.  Gradients flow back into both views' depth/alpha/normal maps; with
full_chain off only the photometric (NCC) term contributes gradients.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class MultiviewConfig:
    patch_size: int = 7
    alpha_thresh: float = 0.5
    min_denom: float = 1e-6
    ncc_eps: float = 1e-8
    full_chain: bool = True


def gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img if img.ndim == 2 else img.mean(axis=2)


def intrinsic_matrix(cam):
    return np.array([[cam.fx, 0.0, cam.cx], [0.0, cam.fy, cam.cy], [0.0, 0.0, 1.0]])


def relative_transform(cam_a, cam_b):
    """(R, T) with X_b = R X_a + T between camera frames."""
    R = cam_b.R_wc @ cam_a.R_wc.T
    T = cam_b.t_wc - R @ cam_a.t_wc
    return R, T


def plane_homography(cam_a, cam_b, n_a, X_a):
    """Homography induced by the plane through X_a with normal n_a (both in
    camera-a coordinates), mapping pixel coords of a to pixel coords of b."""
    R, T = relative_transform(cam_a, cam_b)
    Ka = intrinsic_matrix(cam_a)
    Kb = intrinsic_matrix(cam_b)
    return Kb @ (R + np.outer(T, n_a) / (n_a @ X_a)) @ np.linalg.inv(Ka)


def _bilerp(map2d, fx, fy):
    """Bilinear sample of map2d (H, W) or (H, W, C) at float index coords.

    Returns (values, d/dfx, d/dfy)."""
    H, W = map2d.shape[:2]
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.clip(x0, 0, W - 2)
    y0 = np.clip(y0, 0, H - 2)
    ax = fx - x0
    ay = fy - y0
    if map2d.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    v00 = map2d[y0, x0]
    v01 = map2d[y0, x0 + 1]
    v10 = map2d[y0 + 1, x0]
    v11 = map2d[y0 + 1, x0 + 1]
    top = v00 * (1 - ax) + v01 * ax
    bot = v10 * (1 - ax) + v11 * ax
    val = top * (1 - ay) + bot * ay
    dvx = (v01 - v00) * (1 - ay) + (v11 - v10) * ay
    dvy = bot - top
    return val, dvx, dvy


def _bilerp_scatter(g_map, fx, fy, g_val):
    H, W = g_map.shape[:2]
    x0 = np.clip(np.floor(fx).astype(np.int64), 0, W - 2)
    y0 = np.clip(np.floor(fy).astype(np.int64), 0, H - 2)
    ax = fx - x0
    ay = fy - y0
    if g_map.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    np.add.at(g_map, (y0, x0), g_val * (1 - ax) * (1 - ay))
    np.add.at(g_map, (y0, x0 + 1), g_val * ax * (1 - ay))
    np.add.at(g_map, (y0 + 1, x0), g_val * (1 - ax) * ay)
    np.add.at(g_map, (y0 + 1, x0 + 1), g_val * ax * ay)


def _dehom(q):
    """(N, ..., 3) homogeneous -> (..., 2) plus Jacobian pieces."""
    z = q[..., 2]
    p = q[..., :2] / z[..., None]
    return p, z


def _dehom_backward(g_p, p, z):
    """Adjoint of dehom: g_q given g_p, using p = q_xy/z."""
    g_q = np.zeros(p.shape[:-1] + (3,))
    g_q[..., 0] = g_p[..., 0] / z
    g_q[..., 1] = g_p[..., 1] / z
    g_q[..., 2] = -(g_p[..., 0] * p[..., 0] + g_p[..., 1] * p[..., 1]) / z
    return g_q


def multiview_loss(ref_maps, cam_r, nbr_maps, cam_n, cfg: MultiviewConfig = None):
    """ref_maps/nbr_maps: dicts with depth (sum omega t), alpha, normal
    (blended camera-frame normal map) and image (the ground-truth photo).

    Returns (value, n_valid, upstream_ref, upstream_nbr) where the
    upstream dicts carry gradients for depth/alpha/normal maps.
    """
    cfg = cfg or MultiviewConfig()
    k = cfg.patch_size
    r = k // 2
    H, W = ref_maps["alpha"].shape

    D_r = ref_maps["depth"]
    A_r = ref_maps["alpha"]
    N_r = ref_maps["normal"]
    I_r = gray(ref_maps["image"])
    D_n = nbr_maps["depth"]
    A_n = nbr_maps["alpha"]
    N_n = nbr_maps["normal"]
    I_n = gray(nbr_maps["image"])
    Hn, Wn = A_n.shape

    up_ref = {"depth": np.zeros_like(D_r), "alpha": np.zeros_like(A_r),
              "normal": np.zeros_like(N_r)}
    up_nbr = {"depth": np.zeros_like(D_n), "alpha": np.zeros_like(A_n),
              "normal": np.zeros_like(N_n)}

    # candidate pixels: alpha above threshold, full patch inside the image
    vv, uu = np.mgrid[0:H, 0:W]
    cand = (A_r > cfg.alpha_thresh) & (uu >= r) & (uu < W - r) \
        & (vv >= r) & (vv < H - r) & (D_r > 0)
    ell = np.linalg.norm(N_r, axis=-1)
    cand &= ell > 1e-9
    if not cand.any():
        return 0.0, 0, up_ref, up_nbr, {"warp_px": 0.0, "ncc": 1.0}
    u = uu[cand].astype(np.float64)
    v = vv[cand].astype(np.float64)
    iu = uu[cand]
    iv = vv[cand]

    dirs_r = cam_r.pixel_dirs_cam()[iv, iu]            # (N, 3), constant
    a_r = A_r[iv, iu]
    tbar = D_r[iv, iu] / a_r
    X = tbar[:, None] * dirs_r
    n_raw = N_r[iv, iu]
    ln = np.linalg.norm(n_raw, axis=-1)
    n = n_raw / ln[:, None]
    den = np.sum(n * X, axis=-1)
    keep = np.abs(den) > cfg.min_denom

    R_rn, T_rn = relative_transform(cam_r, cam_n)
    R_nr, T_nr = relative_transform(cam_n, cam_r)
    K_r = intrinsic_matrix(cam_r)
    K_n = intrinsic_matrix(cam_n)
    K_r_inv = np.linalg.inv(K_r)
    K_n_inv = np.linalg.inv(K_n)

    w_r = n / den[:, None]
    Mid = R_rn[None] + np.einsum("i,nj->nij", T_rn, w_r)
    H_rn = np.einsum("ij,njk,kl->nil", K_n, Mid, K_r_inv)

    # warp the patch grid (center included) through the per-pixel homography
    off = np.stack(np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1),
                               indexing="xy"), axis=-1).reshape(-1, 2)
    Kp = off.shape[0]
    ctr_idx = Kp // 2
    pix_k = np.stack([u[:, None] + 0.5 + off[None, :, 0],
                      v[:, None] + 0.5 + off[None, :, 1],
                      np.ones((len(u), Kp))], axis=-1)          # (N, Kp, 3)
    q_k = np.einsum("nij,nkj->nki", H_rn, pix_k)
    z_k = q_k[..., 2]
    keep &= np.all(z_k > 1e-9, axis=1)
    z_k = np.where(np.abs(z_k) < 1e-12, 1e-12, z_k)
    p_k, _ = _dehom(q_k)

    # all warped points must stay inside the neighbor frame (with a bilerp
    # margin); coordinates are pixel-center based, index = coord - 0.5
    keep &= np.all((p_k[..., 0] > 0.6) & (p_k[..., 0] < Wn - 0.6)
                   & (p_k[..., 1] > 0.6) & (p_k[..., 1] < Hn - 0.6), axis=1)

    p_c = p_k[:, ctr_idx, :]
    fxc = p_c[:, 0] - 0.5
    fyc = p_c[:, 1] - 0.5

    eps_a = 1e-6
    ratio_n = D_n / np.maximum(A_n, eps_a)
    tb_n, dtb_x, dtb_y = _bilerp(ratio_n, fxc, fyc)
    an_s, _, _ = _bilerp(A_n, fxc, fyc)
    nn_raw, dnn_x, dnn_y = _bilerp(N_n, fxc, fyc)
    lnn = np.linalg.norm(nn_raw, axis=-1)
    keep &= (an_s > cfg.alpha_thresh) & (lnn > 1e-9) & (tb_n > 0)

    nn = nn_raw / np.maximum(lnn, 1e-12)[:, None]
    mx = (p_c[:, 0] - cam_n.cx) / cam_n.fx
    my = (p_c[:, 1] - cam_n.cy) / cam_n.fy
    m = np.stack([mx, my, np.ones_like(mx)], axis=-1)
    mnorm = np.linalg.norm(m, axis=-1)
    dir_n = m / mnorm[:, None]
    X_n = tb_n[:, None] * dir_n
    den_n = np.sum(nn * X_n, axis=-1)
    keep &= np.abs(den_n) > cfg.min_denom

    w_n = nn / np.where(np.abs(den_n) < 1e-300, 1.0, den_n)[:, None]
    Mid_n = R_nr[None] + np.einsum("i,nj->nij", T_nr, w_n)
    H_nr = np.einsum("ij,njk,kl->nil", K_r, Mid_n, K_n_inv)
    p_c_h = np.concatenate([p_c, np.ones((len(u), 1))], axis=-1)
    q_b = np.einsum("nij,nj->ni", H_nr, p_c_h)
    z_b = q_b[:, 2]
    keep &= z_b > 1e-9
    z_b = np.where(np.abs(z_b) < 1e-12, 1e-12, z_b)
    p_b = q_b[:, :2] / z_b[:, None]
    e_vec = p_b - np.stack([u + 0.5, v + 0.5], axis=-1)
    err = np.linalg.norm(e_vec, axis=-1)

    # NCC between the fixed reference patch and the warped neighbor patch
    a_patch = I_r[iv[:, None] + off[None, :, 1], iu[:, None] + off[None, :, 0]]
    fxk = p_k[..., 0] - 0.5
    fyk = p_k[..., 1] - 0.5
    b_patch, db_x, db_y = _bilerp(I_n, fxk, fyk)
    ca = a_patch - a_patch.mean(axis=1, keepdims=True)
    cb = b_patch - b_patch.mean(axis=1, keepdims=True)
    Va = np.sum(ca * ca, axis=1)
    Vb = np.sum(cb * cb, axis=1)
    Scc = np.sum(ca * cb, axis=1)
    denom = np.maximum(np.sqrt(Va * Vb), cfg.ncc_eps)
    ncc = Scc / denom

    n_valid = int(keep.sum())
    if n_valid == 0:
        return 0.0, 0, up_ref, up_nbr, {"warp_px": 0.0, "ncc": 1.0}
    value = float(np.sum((err + 1.0 - ncc)[keep]) / n_valid)
    stats = {"warp_px": float(err[keep].mean()), "ncc": float(ncc[keep].mean())}

    # ---- backward ----
    kf = keep.astype(np.float64) / n_valid
    g_H_rn = np.zeros_like(H_rn)
    g_p_c = np.zeros((len(u), 2))

    # NCC term: d(1-ncc) through the warped patch samples; the variance
    # path vanishes where the denominator clamp is active
    g_ncc = -kf
    live = (np.sqrt(Va * Vb) > cfg.ncc_eps).astype(np.float64)
    dncc_dcb = (ca / denom[:, None]
                - (live * Scc * Va / denom**3)[:, None] * cb)
    g_b = g_ncc[:, None] * (dncc_dcb - dncc_dcb.mean(axis=1, keepdims=True))
    g_fxk = g_b * db_x
    g_fyk = g_b * db_y
    g_pk = np.stack([g_fxk, g_fyk], axis=-1)
    g_qk = _dehom_backward(g_pk, p_k, z_k)
    g_H_rn += np.einsum("nki,nkj->nij", g_qk, pix_k)

    if cfg.full_chain:
        # reprojection term
        g_err = kf
        safe = np.maximum(err, 1e-12)
        g_pb = g_err[:, None] * e_vec / safe[:, None]
        g_qb = _dehom_backward(g_pb, p_b, z_b)
        g_H_nr = np.einsum("ni,nj->nij", g_qb, p_c_h)
        g_p_c += np.einsum("nij,ni->nj", H_nr[:, :, :2], g_qb)

        # H_nr chain into the sampled neighbor plane
        g_Mid_n = np.einsum("ji,njk,lk->nil", K_r, g_H_nr, K_n_inv)
        g_w_n = np.einsum("i,nij->nj", T_nr, g_Mid_n)
        s_n = np.sum(g_w_n * nn, axis=-1)
        g_nn = g_w_n / den_n[:, None] - (s_n / den_n**2)[:, None] * X_n
        g_X_n = -(s_n / den_n**2)[:, None] * nn
        g_tb_n = np.sum(g_X_n * dir_n, axis=-1)
        g_dir_n = g_X_n * tb_n[:, None]
        g_m = (g_dir_n - dir_n * np.sum(dir_n * g_dir_n, axis=-1, keepdims=True)) \
            / mnorm[:, None]
        g_p_c[:, 0] += g_m[:, 0] / cam_n.fx
        g_p_c[:, 1] += g_m[:, 1] / cam_n.fy

        # normalize(nn_raw)
        g_nn_raw = (g_nn - nn * np.sum(nn * g_nn, axis=-1, keepdims=True)) \
            / np.maximum(lnn, 1e-12)[:, None]
        # sampled neighbor maps: value gradients + sampling-position grads
        g_p_c[:, 0] += np.sum(g_nn_raw * dnn_x, axis=-1) + g_tb_n * dtb_x
        g_p_c[:, 1] += np.sum(g_nn_raw * dnn_y, axis=-1) + g_tb_n * dtb_y
        g_ratio = np.zeros_like(ratio_n)
        _bilerp_scatter(g_ratio, fxc, fyc, g_tb_n)
        _bilerp_scatter(up_nbr["normal"], fxc, fyc, g_nn_raw)
        big_a = A_n > eps_a
        up_nbr["depth"] += np.where(big_a, g_ratio / np.maximum(A_n, eps_a), 0.0)
        up_nbr["alpha"] += np.where(big_a, -g_ratio * D_n / np.maximum(A_n, eps_a) ** 2, 0.0)

        # center warp position feeds H_rn
        g_q_c = _dehom_backward(g_p_c, p_c, z_k[:, ctr_idx])
        g_H_rn += np.einsum("ni,nj->nij", g_q_c, pix_k[:, ctr_idx])

    # H_rn chain into the reference plane (with full_chain off this carries
    # only the NCC sampling-position gradients collected above)
    g_Mid = np.einsum("ji,njk,lk->nil", K_n, g_H_rn, K_r_inv)
    g_w_r = np.einsum("i,nij->nj", T_rn, g_Mid)
    s_r = np.sum(g_w_r * n, axis=-1)
    g_n = g_w_r / den[:, None] - (s_r / den**2)[:, None] * X
    g_X = -(s_r / den**2)[:, None] * n
    g_tbar = np.sum(g_X * dirs_r, axis=-1)
    g_n_raw = (g_n - n * np.sum(n * g_n, axis=-1, keepdims=True)) / ln[:, None]

    np.add.at(up_ref["normal"], (iv, iu), g_n_raw)
    np.add.at(up_ref["depth"], (iv, iu), g_tbar / a_r)
    np.add.at(up_ref["alpha"], (iv, iu), -g_tbar * tbar / a_r)
    return value, n_valid, up_ref, up_nbr, stats
