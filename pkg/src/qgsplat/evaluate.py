"""Image and geometry metrics plus the per-image CSV report."""

import csv

import numpy as np

from . import ssim as ssim_mod

PSNR_CAP = 99.0


def psnr(pred, gt, cap=PSNR_CAP):
    mse = float(np.mean((np.asarray(pred) - np.asarray(gt)) ** 2))
    if mse <= 0:
        return cap
    return min(cap, -10.0 * np.log10(mse))


def depth_errors(pred, gt, mask):
    """(MAE, RMSE) over the mask; (nan, nan) when empty."""
    if not np.any(mask):
        return float("nan"), float("nan")
    d = np.abs(pred[mask] - gt[mask])
    return float(d.mean()), float(np.sqrt((d * d).mean()))


def normal_angular_error_deg(pred, gt, mask):
    """Mean angle between unit-normalized normals over the mask."""
    if not np.any(mask):
        return float("nan")
    p = pred[mask]
    g = gt[mask]
    p = p / np.maximum(np.linalg.norm(p, axis=-1, keepdims=True), 1e-12)
    g = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    cos = np.clip(np.sum(p * g, axis=-1), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).mean())


def evaluate_views(colors, gt_images, depths=None, gt_depths=None,
                   alphas=None, normals=None, gt_normals=None,
                   alpha_thresh=0.5):
    """Per-view metric rows plus means.  Geometry metrics are computed over
    pixels where both the render is opaque (alpha > thresh) and the ground
    truth is valid (depth > 0)."""
    rows = []
    for i, (c, g) in enumerate(zip(colors, gt_images)):
        if c.shape != g.shape:
            raise ValueError(f"view {i}: image shapes differ")
        row = {"view": i, "psnr": psnr(c, g), "ssim": ssim_mod.ssim(c, g)}
        if depths is not None and gt_depths is not None:
            mask = (alphas[i] > alpha_thresh) & (gt_depths[i] > 0)
            mae, rmse = depth_errors(depths[i], gt_depths[i], mask)
            row["depth_mae"] = mae
            row["depth_rmse"] = rmse
        if normals is not None and gt_normals is not None:
            mask = (alphas[i] > alpha_thresh) & (gt_depths[i] > 0)
            row["normal_deg"] = normal_angular_error_deg(normals[i], gt_normals[i], mask)
        rows.append(row)
    keys = [k for k in rows[0] if k != "view"]
    summary = {k: float(np.nanmean([r[k] for r in rows])) for k in keys}
    return summary, rows


def write_csv(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: f"{v:.8f}" if isinstance(v, float) else v
                             for k, v in r.items()})
