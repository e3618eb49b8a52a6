"""End-to-end fitting: initialization, the optimization loop, adaptive
density control and checkpointing."""

import os
import time

import numpy as np
from scipy.spatial import cKDTree

from . import evaluate, io_maps, losses, multiview, rasterizer, sh as shlib
from .cameras import load_cameras, neighbor_views, scene_extent
from .config import TrainConfig
from .model import (PrimitiveSet, activate_scales, inverse_sigmoid, load_ply,
                    quat_to_rot, save_ply, sigmoid)
from .optim import Adam, GROUPS, center_lr


def axes_crossing(cams):
    """Least-squares intersection point of the camera optical axes."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c in cams:
        d = c.R_cw @ np.array([0.0, 0.0, 1.0])
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ c.center
    return np.linalg.solve(A + 1e-9 * np.eye(3), b)


def init_primitives(cfg: TrainConfig, cams, points=None, colors=None, rng=None):
    """Either from a seed point cloud or uniform in the viewing volume."""
    rng = rng or np.random.default_rng(cfg.seed)
    if points is None:
        center = axes_crossing(cams)
        radius = 0.5 * scene_extent(cams)
        n = cfg.init_points
        u = rng.normal(size=(n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = radius * rng.uniform(0, 1, n) ** (1 / 3)
        points = center + u * r[:, None]
        colors = None
    points = np.asarray(points, dtype=np.float64)
    n = len(points)

    tree = cKDTree(points)
    dist, _ = tree.query(points, k=min(4, n))
    nn = dist[:, 1:].mean(axis=1) if n > 1 else np.full(n, 0.1)
    nn = np.clip(nn, 1e-4, None)

    raw_scales = np.empty((n, 3))
    tanh_sat = np.tanh(cfg.init_sign_raw)
    raw_scales[:, 0] = np.log(nn / tanh_sat)
    raw_scales[:, 1] = np.log(nn / tanh_sat)
    raw_scales[:, 2] = np.log(np.maximum(cfg.init_s3_ratio * nn, 1e-12) / tanh_sat)
    raw_signs = np.full((n, 3), cfg.init_sign_raw)
    if cfg.s3_fixed:
        raw_scales[:, 2] = np.log(cfg.s3_fixed_value)
        raw_signs[:, 2] = 20.0

    quats = rng.normal(size=(n, 4)) * 0.05
    quats[:, 0] += 1.0
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)

    k = (cfg.sh_degree + 1) ** 2
    sh = np.zeros((n, 3, k))
    if colors is None:
        base = rng.uniform(0.3, 0.7, size=(n, 3))
    else:
        base = np.asarray(colors, dtype=np.float64)
    sh[:, :, 0] = shlib.rgb_to_sh0(base)

    raw_opacity = np.full(n, inverse_sigmoid(cfg.init_opacity))
    return PrimitiveSet(points.copy(), quats, raw_scales, raw_signs,
                        raw_opacity, sh)


def load_points_ply(path):
    """Minimal PLY point reader: x/y/z float or double, optional rgb."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = None
        n = 0
        props = []
        in_vertex = False
        while True:
            tok = f.readline().decode("ascii").split()
            if not tok:
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append((tok[1], tok[2]))
            elif tok[0] == "end_header":
                break
        names = [p[1] for p in props]
        if fmt == "ascii":
            data = np.loadtxt(f, max_rows=n).reshape(n, len(props))
        elif fmt == "binary_little_endian":
            np_types = {"float": "<f4", "double": "<f8", "uchar": "u1",
                        "uint8": "u1", "int": "<i4", "uint": "<u4"}
            dt = np.dtype([(f"c{i}", np_types[p[0]]) for i, p in enumerate(props)])
            raw = np.frombuffer(f.read(dt.itemsize * n), dtype=dt)
            data = np.column_stack([raw[f"c{i}"].astype(np.float64)
                                    for i in range(len(props))])
        else:
            raise ValueError(f"{path}: unsupported PLY format {fmt}")
    ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
    pts = data[:, [ix, iy, iz]]
    colors = None
    if "red" in names:
        ir = [names.index(c) for c in ("red", "green", "blue")]
        colors = data[:, ir] / 255.0
    return pts, colors


def load_dataset(data_dir):
    """cameras.json + images (+ optional points.ply seed, depth/*.f32)."""
    cams = load_cameras(os.path.join(data_dir, "cameras.json"))
    images = [io_maps.load_png(os.path.join(data_dir, c.image)) for c in cams]
    points = colors = None
    ply = os.path.join(data_dir, "points.ply")
    if os.path.exists(ply):
        points, colors = load_points_ply(ply)
    depths = None
    ddir = os.path.join(data_dir, "depth")
    if os.path.isdir(ddir):
        depths = [io_maps.load_f32(os.path.join(ddir, f"{i:03d}.f32"))
                  for i in range(len(cams))]
    return cams, images, points, colors, depths


class Trainer:
    def __init__(self, cams, images, cfg: TrainConfig, points=None,
                 point_colors=None):
        self.cams = cams
        self.images = [np.asarray(im, dtype=np.float64) for im in images]
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.extent = scene_extent(cams)
        self.prims = init_primitives(cfg, cams, points, point_colors, self.rng)
        self.opt = Adam(self.prims)
        self.settings = rasterizer.RenderSettings(
            background=cfg.background_color(),
            resort=not cfg.resort_off,
            euclidean_density=cfg.euclidean_density)
        self.step = 0
        self.grad_accum = np.zeros(len(self.prims))
        self.grad_count = np.zeros(len(self.prims))
        self.center_accum = np.zeros((len(self.prims), 3))
        target = axes_crossing(cams)
        self.neighbors = [neighbor_views(cams, i, k=cfg.mv_neighbors,
                                         min_baseline_deg=cfg.mv_min_baseline_deg,
                                         target=target)
                          for i in range(len(cams))]
        self.history = []

    def _freeze_masks(self):
        if not self.cfg.s3_fixed:
            return None
        m_scales = np.zeros_like(self.prims.raw_scales, dtype=bool)
        m_scales[:, 2] = True
        m_signs = np.zeros_like(self.prims.raw_signs, dtype=bool)
        m_signs[:, 2] = True
        return {"raw_scales": m_scales, "raw_signs": m_signs}

    def _lrs(self):
        cfg = self.cfg
        return {
            "centers": center_lr(self.step, cfg.iterations, cfg.lr_center,
                                 cfg.lr_center_final_ratio, self.extent),
            "quats": cfg.lr_rotation,
            "raw_scales": cfg.lr_scales,
            "raw_signs": cfg.lr_signs,
            "raw_opacity": cfg.lr_opacity,
            "sh": cfg.lr_sh,
        }

    def train_iteration(self):
        cfg = self.cfg
        i = self.rng.integers(len(self.cams))
        cam = self.cams[int(i)]
        gt = self.images[int(i)]

        prep = rasterizer.prepare(self.prims, cam, self.settings)
        targets = rasterizer.forward(prep)
        upstream = rasterizer.zero_upstream(cam)

        l_c, g_color = losses.photometric(targets.color, gt, cfg.lambda_photo_ssim)
        upstream["color"] += g_color
        parts = {"l_c": l_c, "l_d": 0.0, "l_kn": 0.0, "l_mv": 0.0}

        if self.step >= cfg.dist_from and cfg.lambda_d > 0:
            l_d, g_dist = losses.depth_distortion(targets.distortion)
            upstream["distortion"] += cfg.lambda_d * g_dist
            parts["l_d"] = l_d

        if self.step >= cfg.normal_from and cfg.lambda_n > 0:
            N, mask = losses.depth_to_normal(targets.depth_median,
                                             targets.alpha, cam)
            l_kn, da, dn, dk = losses.curvature_guided_normal_consistency(
                targets.alpha, targets.normal, targets.curvature, N, mask,
                cfg.eps_curvature, guided=not cfg.lambdaK_off)
            upstream["alpha"] += cfg.lambda_n * da
            upstream["normal"] += cfg.lambda_n * dn
            upstream["curvature"] += cfg.lambda_n * dk
            parts["l_kn"] = l_kn

        grads_nbr = None
        prep_nbr = None
        if (self.step >= cfg.mv_from and not cfg.mv_off and cfg.lambda_mv > 0
                and self.neighbors[int(i)]):
            j = self.neighbors[int(i)][self.step % len(self.neighbors[int(i)])]
            cam_n = self.cams[j]
            prep_nbr = rasterizer.prepare(self.prims, cam_n, self.settings)
            targets_n = rasterizer.forward(prep_nbr)
            mv_cfg = multiview.MultiviewConfig(
                patch_size=cfg.mv_patch, full_chain=cfg.mv_full_chain)
            ref_maps = {"depth": targets.depth, "alpha": targets.alpha,
                        "normal": targets.normal, "image": gt}
            nbr_maps = {"depth": targets_n.depth, "alpha": targets_n.alpha,
                        "normal": targets_n.normal, "image": self.images[j]}
            l_mv, nv, up_ref, up_nbr, _ = multiview.multiview_loss(
                ref_maps, cam, nbr_maps, cam_n, mv_cfg)
            parts["l_mv"] = l_mv
            for key in ("depth", "alpha", "normal"):
                upstream[key] = upstream.get(key, 0) + cfg.lambda_mv * up_ref[key]
            up_n = {k: cfg.lambda_mv * v for k, v in up_nbr.items()}
            grads_nbr = rasterizer.backward(prep_nbr, targets_n, up_n)

        grads = rasterizer.backward(prep, targets, upstream)
        if grads_nbr is not None:
            grads.iadd(grads_nbr)

        # densification statistics: screen-projected center gradient norms
        gnorm = np.linalg.norm(grads.screen_center, axis=1)
        seen = gnorm > 0
        self.grad_accum[seen] += gnorm[seen]
        self.grad_count[seen] += 1
        self.center_accum += grads.centers

        self.opt.step(self.prims, grads, self._lrs(), freeze=self._freeze_masks())

        total = losses.total_loss(parts["l_c"], parts["l_d"], parts["l_kn"],
                                  parts["l_mv"],
                                  losses.LossWeights(cfg.lambda_d, cfg.lambda_n,
                                                     cfg.lambda_mv,
                                                     cfg.lambda_photo_ssim,
                                                     cfg.eps_curvature))
        self.step += 1

        if (cfg.densify_from <= self.step <= cfg.densify_until
                and self.step % cfg.densify_interval == 0):
            self.densify_and_prune()
        if cfg.opacity_reset_interval and self.step % cfg.opacity_reset_interval == 0:
            self.reset_opacity()
        return total, parts, targets

    def _reset_stats(self):
        n = len(self.prims)
        self.grad_accum = np.zeros(n)
        self.grad_count = np.zeros(n)
        self.center_accum = np.zeros((n, 3))

    def densify_and_prune(self):
        cfg = self.cfg
        prims = self.prims
        mean_grad = np.where(self.grad_count > 0,
                             self.grad_accum / np.maximum(self.grad_count, 1), 0.0)
        densify = mean_grad > cfg.densify_grad_threshold
        room = cfg.max_primitives - len(prims)
        if room <= 0:
            densify[:] = False
        elif densify.sum() > room:
            # highest-gradient primitives first, deterministic tie-break
            order = np.lexsort((np.arange(len(prims)), -mean_grad))
            chosen = order[:room]
            keep = np.zeros(len(prims), dtype=bool)
            keep[chosen] = True
            densify &= keep

        scales, _ = activate_scales(prims.raw_scales, prims.raw_signs)
        smax = np.maximum(np.abs(scales[:, 0]), np.abs(scales[:, 1]))
        big = smax > cfg.percent_dense * self.extent
        split_mask = densify & big
        clone_mask = densify & ~big

        survivors = ~split_mask
        new_sets = [prims.select(survivors)]
        self.opt.keep(survivors)

        n_added = 0
        if clone_mask.any():
            clones = prims.select(clone_mask)
            g = self.center_accum[clone_mask]
            norm = np.linalg.norm(g, axis=1, keepdims=True)
            direction = np.where(norm > 1e-12, -g / np.maximum(norm, 1e-12), 0.0)
            sc, _ = activate_scales(clones.raw_scales, clones.raw_signs)
            stepl = cfg.clone_nudge * np.minimum(np.abs(sc[:, 0]), np.abs(sc[:, 1]))
            clones.centers += direction * stepl[:, None]
            new_sets.append(clones)
            n_added += len(clones)

        if split_mask.any():
            parents = prims.select(split_mask)
            sc, _ = activate_scales(parents.raw_scales, parents.raw_signs)
            axis = (np.abs(sc[:, 1]) > np.abs(sc[:, 0])).astype(int)
            R = quat_to_rot(parents.quats).reshape(len(parents), 3, 3)
            axes_world = R[np.arange(len(parents)), :, axis]
            offset = 0.5 * np.abs(sc[np.arange(len(parents)), axis])[:, None] * axes_world
            for sign in (1.0, -1.0):
                child = parents.copy()
                child.centers += sign * offset
                child.raw_scales[np.arange(len(parents)), axis] -= np.log(2.0)
                new_sets.append(child)
                n_added += len(child)

        self.prims = PrimitiveSet.concatenate(new_sets)
        self.opt.extend(n_added)

        # prune transparent primitives
        alpha = sigmoid(self.prims.raw_opacity)
        keep = alpha >= cfg.prune_opacity
        self.prims = self.prims.select(keep)
        self.opt.keep(keep)
        self._reset_stats()

    def reset_opacity(self):
        alpha = sigmoid(self.prims.raw_opacity)
        self.prims.raw_opacity[:] = inverse_sigmoid(np.minimum(alpha, 0.01))
        self.opt.reset_group("raw_opacity")

    def fit(self, out_dir=None, log=print):
        cfg = self.cfg
        t0 = time.time()
        while self.step < cfg.iterations:
            total, parts, _ = self.train_iteration()
            if cfg.log_every and self.step % cfg.log_every == 0:
                self.history.append({"step": self.step, "loss": total,
                                     "n_prims": len(self.prims)})
                if log:
                    log(f"[{self.step:6d}] loss={total:.5f} "
                        f"L_c={parts['l_c']:.5f} n={len(self.prims)}")
            if (out_dir and cfg.checkpoint_every
                    and self.step % cfg.checkpoint_every == 0):
                save_ply(os.path.join(out_dir, f"ckpt_{self.step:06d}.ply"),
                         self.prims)
        self.wall_time = time.time() - t0
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            save_ply(os.path.join(out_dir, "point_cloud.ply"), self.prims)
        return self.prims

    def render_views(self, cams=None):
        cams = cams or self.cams
        outs = []
        for cam in cams:
            prep = rasterizer.prepare(self.prims, cam, self.settings)
            outs.append(rasterizer.forward(prep))
        return outs

    def evaluate(self, cams, gt_images, gt_depths=None, gt_normals=None):
        outs = self.render_views(cams)
        return evaluate.evaluate_views(
            [t.color for t in outs], gt_images,
            depths=[t.depth_median for t in outs] if gt_depths is not None else None,
            gt_depths=gt_depths,
            alphas=[t.alpha for t in outs],
            normals=[t.normal for t in outs] if gt_normals is not None else None,
            gt_normals=gt_normals)
