"""Differentiable tile renderer: binning, forward maps, analytic backward.

forward() produces color / alpha / depth (blended + median) / normal
(camera frame) / curvature / distortion maps plus the transmittance trace.
backward() takes upstream gradients on those maps and returns gradients on
the raw primitive parameters, accumulated deterministically (per-tile
partials merged in tile-then-sorted-position order).
"""

from dataclasses import dataclass, field

import numpy as np

from . import raster_kernels as rk
from . import sh as shlib
from .bounds import tight_bboxes_batch, TILE
from .intersect import T_NEAR_CLIP
from .model import (PrimitiveSet, S3_FLAT, activate_scales, quat_rot_backward,
                    quat_to_rot, scale_activation_grads, sigmoid, sign0)


@dataclass
class RenderSettings:
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_near_clip: float = T_NEAR_CLIP
    alpha_floor: float = 1.0 / 255.0
    alpha_clamp: float = 0.999
    t_term: float = 1e-4
    resort: bool = True
    euclidean_density: bool = False


@dataclass
class PreparedView:
    cam: object
    settings: RenderSettings
    prims: PrimitiveSet
    # activated / derived per-primitive state
    scales: np.ndarray
    clamped: np.ndarray
    alphas: np.ndarray
    R: np.ndarray
    ohat: np.ndarray
    M: np.ndarray
    wv: np.ndarray
    lam: np.ndarray
    colors: np.ndarray
    color_clamped: np.ndarray
    view_dirs: np.ndarray
    view_dist: np.ndarray
    Nmat: np.ndarray
    planar: np.ndarray
    pix_bbox: np.ndarray
    tile_offsets: np.ndarray
    tile_prims: np.ndarray
    tiles_x: int
    tiles_y: int
    dirs: np.ndarray


@dataclass
class RenderTargets:
    color: np.ndarray          # blended color + background, (H, W, 3)
    color_raw: np.ndarray      # blended color without background
    alpha: np.ndarray
    depth: np.ndarray          # sum omega_i t_i
    depth_sq: np.ndarray       # sum omega_i t_i^2
    depth_median: np.ndarray   # max { t_i | T_i > 0.5 }
    normal: np.ndarray         # camera-frame blended normal
    curvature: np.ndarray
    distortion: np.ndarray     # sum_{i, j<i} omega_i omega_j (t_i - t_j)^2
    transmittance: np.ndarray
    n_fragments: np.ndarray
    order_violations: int


@dataclass
class GradientBuffer:
    centers: np.ndarray
    quats: np.ndarray
    raw_scales: np.ndarray
    raw_signs: np.ndarray
    raw_opacity: np.ndarray
    sh: np.ndarray
    screen_center: np.ndarray  # ndc-scale projected center gradient, (P, 2)

    @staticmethod
    def zeros(prims):
        return GradientBuffer(
            np.zeros_like(prims.centers), np.zeros_like(prims.quats),
            np.zeros_like(prims.raw_scales), np.zeros_like(prims.raw_signs),
            np.zeros_like(prims.raw_opacity), np.zeros_like(prims.sh),
            np.zeros((len(prims), 2)))

    def iadd(self, other):
        self.centers += other.centers
        self.quats += other.quats
        self.raw_scales += other.raw_scales
        self.raw_signs += other.raw_signs
        self.raw_opacity += other.raw_opacity
        self.sh += other.sh
        self.screen_center += other.screen_center
        return self

    def finite(self):
        return all(np.all(np.isfinite(a)) for a in
                   (self.centers, self.quats, self.raw_scales,
                    self.raw_signs, self.raw_opacity, self.sh))


def zero_upstream(cam):
    H, W = cam.height, cam.width
    return {
        "color": np.zeros((H, W, 3)),
        "alpha": np.zeros((H, W)),
        "depth": np.zeros((H, W)),
        "normal": np.zeros((H, W, 3)),
        "curvature": np.zeros((H, W)),
        "distortion": np.zeros((H, W)),
    }


def prepare(prims: PrimitiveSet, cam, settings: RenderSettings = None) -> PreparedView:
    settings = settings or RenderSettings()
    P = len(prims)
    scales, clamped = activate_scales(prims.raw_scales, prims.raw_signs)
    alphas = sigmoid(prims.raw_opacity)
    R = quat_to_rot(prims.quats).reshape(P, 3, 3)

    s1, s2, s3 = scales[:, 0], scales[:, 1], scales[:, 2]
    planar = (np.abs(s3) < S3_FLAT).astype(np.uint8)
    w1 = sign0(s1) / s1**2
    w2 = sign0(s2) / s2**2
    iw3 = np.where(planar == 1, 0.0, 1.0 / np.where(planar == 1, 1.0, s3))
    wv = np.stack([w1, w2, iw3], axis=1)
    lam = np.stack([s3 * w1, s3 * w2], axis=1)

    eye = cam.center
    ohat = np.einsum("pji,pj->pi", R, eye - prims.centers)
    M = np.einsum("pji,jk->pik", R, cam.R_cw)   # R^T @ R_cw
    Nmat = np.einsum("ij,pjk->pik", cam.R_wc, R)

    v = prims.centers - eye
    dist = np.linalg.norm(v, axis=1)
    dist = np.maximum(dist, 1e-12)
    view_dirs = v / dist[:, None]
    colors, color_clamped = shlib.eval_color(prims.sh, view_dirs)

    # screen bboxes and tile binning
    tiles_x = (cam.width + TILE - 1) // TILE
    tiles_y = (cam.height + TILE - 1) // TILE
    pix_bbox = tight_bboxes_batch(scales, prims.centers, R, cam)
    live = pix_bbox[:, 0] <= pix_bbox[:, 1]
    tx0 = pix_bbox[:, 0] // TILE
    tx1 = pix_bbox[:, 1] // TILE
    ty0 = pix_bbox[:, 2] // TILE
    ty1 = pix_bbox[:, 3] // TILE
    nt = np.where(live, (tx1 - tx0 + 1) * (ty1 - ty0 + 1), 0)
    total = int(nt.sum())
    pair_prims = np.repeat(np.arange(P, dtype=np.int64), nt)
    pair_tiles = np.zeros(total, dtype=np.int64)
    if total:
        # per-pair tile index from the running offset within each bbox
        starts = np.concatenate([[0], np.cumsum(nt)[:-1]])
        local = np.arange(total, dtype=np.int64) - starts[pair_prims]
        ncols = (tx1 - tx0 + 1)[pair_prims]
        pair_tiles = ((ty0[pair_prims] + local // ncols) * tiles_x
                      + tx0[pair_prims] + local % ncols)

    vert_u, vert_v, _ = cam.project(prims.centers)
    keys = rk.tile_sort_depths(pair_tiles, pair_prims, tiles_x, ohat, M, wv,
                               scales, planar, vert_u, vert_v, dist,
                               cam.cx, cam.cy, cam.fx, cam.fy,
                               cam.width, cam.height,
                               settings.euclidean_density, settings.t_near_clip)
    order = np.lexsort((pair_prims, keys, pair_tiles))
    pair_tiles = pair_tiles[order]
    pair_prims = pair_prims[order]
    counts = np.bincount(pair_tiles, minlength=tiles_x * tiles_y)
    tile_offsets = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    np.cumsum(counts, out=tile_offsets[1:])

    dirs = np.ascontiguousarray(cam.pixel_dirs_cam())

    return PreparedView(cam=cam, settings=settings, prims=prims,
                        scales=scales, clamped=clamped, alphas=alphas, R=R,
                        ohat=np.ascontiguousarray(ohat),
                        M=np.ascontiguousarray(M), wv=np.ascontiguousarray(wv),
                        lam=np.ascontiguousarray(lam),
                        colors=np.ascontiguousarray(colors),
                        color_clamped=color_clamped, view_dirs=view_dirs,
                        view_dist=dist, Nmat=np.ascontiguousarray(Nmat),
                        planar=planar, pix_bbox=pix_bbox,
                        tile_offsets=tile_offsets, tile_prims=pair_prims,
                        tiles_x=tiles_x, tiles_y=tiles_y, dirs=dirs)


def forward(prep: PreparedView) -> RenderTargets:
    cam, st = prep.cam, prep.settings
    H, W = cam.height, cam.width
    out_color = np.zeros((H, W, 3))
    out_alpha = np.zeros((H, W))
    out_depth = np.zeros((H, W))
    out_depthsq = np.zeros((H, W))
    out_median = np.zeros((H, W))
    out_normal = np.zeros((H, W, 3))
    out_curv = np.zeros((H, W))
    out_dist = np.zeros((H, W))
    out_T = np.ones((H, W))
    out_nfrag = np.zeros((H, W), dtype=np.int64)
    out_viol = np.zeros(prep.tiles_x * prep.tiles_y, dtype=np.int64)
    rk.forward_kernel(H, W, prep.dirs, prep.tile_offsets, prep.tile_prims,
                      prep.tiles_x, prep.tiles_y, prep.pix_bbox, prep.ohat,
                      prep.M, prep.wv, prep.scales, prep.lam, prep.alphas,
                      prep.colors, prep.Nmat, prep.planar,
                      st.resort, st.euclidean_density, st.t_near_clip,
                      st.alpha_floor, st.alpha_clamp, st.t_term,
                      out_color, out_alpha, out_depth, out_depthsq,
                      out_median, out_normal, out_curv, out_dist, out_T,
                      out_nfrag, out_viol)
    color = out_color + out_T[:, :, None] * np.asarray(st.background)
    return RenderTargets(color=color, color_raw=out_color, alpha=out_alpha,
                         depth=out_depth, depth_sq=out_depthsq,
                         depth_median=out_median, normal=out_normal,
                         curvature=out_curv, distortion=out_dist,
                         transmittance=out_T, n_fragments=out_nfrag,
                         order_violations=int(out_viol.sum()))


def backward(prep: PreparedView, targets: RenderTargets, upstream) -> GradientBuffer:
    """Chain upstream map gradients to raw primitive parameters.

    upstream: dict with optional entries color, alpha, depth, normal,
    curvature, distortion ((H,W[,3]) arrays); color gradients apply to the
    composited color including background.
    """
    cam, st = prep.cam, prep.settings
    H, W = cam.height, cam.width
    zeros2 = np.zeros((H, W))
    u_color = np.ascontiguousarray(upstream.get("color", np.zeros((H, W, 3))), dtype=np.float64)
    u_alpha = np.array(upstream.get("alpha", zeros2), dtype=np.float64)
    u_depth = np.ascontiguousarray(upstream.get("depth", zeros2), dtype=np.float64)
    u_normal = np.ascontiguousarray(upstream.get("normal", np.zeros((H, W, 3))), dtype=np.float64)
    u_curv = np.ascontiguousarray(upstream.get("curvature", zeros2), dtype=np.float64)
    u_dist = np.ascontiguousarray(upstream.get("distortion", zeros2), dtype=np.float64)
    # final color = raw + T * bg and T = prod(1 - abar) contributes through
    # alpha: d(final)/d(alpha_map) picks up -bg . u_color
    bg = np.asarray(st.background, dtype=np.float64)
    u_alpha = u_alpha - u_color @ bg
    u_alpha = np.ascontiguousarray(u_alpha)

    pair_grad = np.zeros(len(prep.tile_prims) * rk.NG)
    rk.backward_kernel(H, W, prep.dirs, prep.tile_offsets, prep.tile_prims,
                       prep.tiles_x, prep.tiles_y, prep.pix_bbox, prep.ohat,
                       prep.M, prep.wv, prep.scales, prep.lam, prep.alphas,
                       prep.colors, prep.Nmat, prep.planar,
                       st.resort, st.euclidean_density, st.t_near_clip,
                       st.alpha_floor, st.alpha_clamp, st.t_term,
                       targets.color_raw, targets.alpha, targets.depth,
                       targets.depth_sq, targets.normal, targets.curvature,
                       targets.distortion,
                       u_color, u_alpha, u_depth, u_normal, u_curv, u_dist,
                       pair_grad)
    P = len(prep.prims)
    kg = np.zeros((P, rk.NG))
    rk.merge_pair_grads(prep.tile_prims, pair_grad, kg)
    return _chain_to_raw(prep, kg)


def _chain_to_raw(prep: PreparedView, kg: np.ndarray) -> GradientBuffer:
    prims = prep.prims
    P = len(prims)
    cam = prep.cam
    out = GradientBuffer.zeros(prims)

    g_ohat = kg[:, 0:3]
    g_M = kg[:, 3:12].reshape(P, 3, 3)
    g_w = kg[:, 12:15].copy()          # w1, w2, iw3
    g_s = kg[:, 15:18].copy()          # s1, s2, s3
    g_alpha = kg[:, 18]
    g_color = kg[:, 19:22]
    g_N = kg[:, 22:31].reshape(P, 3, 3)
    g_lam = kg[:, 31:33]

    s1 = prep.scales[:, 0]
    s2 = prep.scales[:, 1]
    s3 = prep.scales[:, 2]
    nonplanar = prep.planar == 0

    # lam_k = s3 * w_k
    g_s[:, 2] += g_lam[:, 0] * prep.wv[:, 0] + g_lam[:, 1] * prep.wv[:, 1]
    g_w[:, 0] += g_lam[:, 0] * s3
    g_w[:, 1] += g_lam[:, 1] * s3
    # w_k = sign(s_k)/s_k^2, iw3 = 1/s3
    g_s[:, 0] += g_w[:, 0] * (-2.0 * prep.wv[:, 0] / s1)
    g_s[:, 1] += g_w[:, 1] * (-2.0 * prep.wv[:, 1] / s2)
    g_s[:, 2] += np.where(nonplanar, g_w[:, 2] * (-1.0 / np.where(nonplanar, s3, 1.0) ** 2), 0.0)

    ds_dx, ds_dt = scale_activation_grads(prims.raw_scales, prims.raw_signs)
    live = ~prep.clamped
    out.raw_scales[:] = np.where(live, g_s * ds_dx, 0.0)
    out.raw_signs[:] = np.where(live, g_s * ds_dt, 0.0)

    # opacity through the sigmoid
    out.raw_opacity[:] = g_alpha * prep.alphas * (1.0 - prep.alphas)

    # rotations: M = R^T R_cw, ohat = R^T (eye - c), Nmat = R_wc R
    g_R = np.einsum("jk,pik->pji", cam.R_cw, g_M)
    eye = cam.center
    g_R += np.einsum("pj,pi->pji", eye - prims.centers, g_ohat)
    g_R += np.einsum("ji,pjk->pik", cam.R_wc, g_N)
    out.quats[:] = quat_rot_backward(prims.quats, g_R)

    # centers: through ohat and the SH view direction
    out.centers[:] = -np.einsum("pij,pj->pi", prep.R, g_ohat)
    g_sh, g_dir = shlib.eval_color_backward(prims.sh, prep.view_dirs,
                                            prep.color_clamped, g_color)
    out.sh[:] = g_sh
    dirs = prep.view_dirs
    g_c_dir = (g_dir - dirs * np.sum(g_dir * dirs, axis=1, keepdims=True))
    out.centers += g_c_dir / prep.view_dist[:, None]

    # screen-space center gradient (ndc scale) for densification control
    pc = cam.to_cam(prims.centers)
    X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
    Zs = np.where(np.abs(Z) < 1e-9, 1e-9, Z)
    Ju = cam.fx * (cam.R_wc[0][None, :] / Zs[:, None]
                   - X[:, None] * cam.R_wc[2][None, :] / Zs[:, None] ** 2)
    Jv = cam.fy * (cam.R_wc[1][None, :] / Zs[:, None]
                   - Y[:, None] * cam.R_wc[2][None, :] / Zs[:, None] ** 2)
    gu = np.sum(Ju * out.centers, axis=1) * (2.0 / cam.width)
    gv = np.sum(Jv * out.centers, axis=1) * (2.0 / cam.height)
    out.screen_center[:] = np.stack([gu, gv], axis=1)
    return out


def render(prims, cam, settings=None):
    """Convenience one-shot forward."""
    prep = prepare(prims, cam, settings)
    return forward(prep), prep
