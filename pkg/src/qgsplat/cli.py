"""qgs command line: fit / render / eval / synth."""

import argparse
import os
import sys

import numpy as np

from . import evaluate, io_maps, rasterizer, synth
from .cameras import load_cameras
from .config import TrainConfig, load_config
from .model import load_ply
from .train import Trainer, load_dataset


def _cmd_fit(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.seed is not None:
        cfg.seed = args.seed
    cams, images, points, colors, _ = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    trainer = Trainer(cams, images, cfg, points=points, point_colors=colors)
    trainer.fit(out_dir=args.out)
    summary, rows = trainer.evaluate(cams, images)
    evaluate.write_csv(os.path.join(args.out, "train_metrics.csv"), rows)
    print(f"fit done: {len(trainer.prims)} primitives, "
          f"train PSNR {summary['psnr']:.2f} dB, "
          f"{trainer.wall_time:.1f}s")
    return 0


def _cmd_render(args):
    prims = load_ply(args.ckpt)
    cams = load_cameras(args.cameras)
    os.makedirs(args.out, exist_ok=True)
    settings = rasterizer.RenderSettings()
    for i, cam in enumerate(cams):
        prep = rasterizer.prepare(prims, cam, settings)
        t = rasterizer.forward(prep)
        io_maps.save_png(os.path.join(args.out, f"color_{i:03d}.png"), t.color)
        io_maps.save_f32(os.path.join(args.out, f"depth_{i:03d}.f32"), t.depth_median)
        io_maps.save_f32(os.path.join(args.out, f"normal_{i:03d}.f32"), t.normal)
        io_maps.save_f32(os.path.join(args.out, f"curvature_{i:03d}.f32"), t.curvature)
    print(f"rendered {len(cams)} views to {args.out}")
    return 0


def _cmd_eval(args):
    pred_dir, gt_dir = args.pred, args.gt
    cams = load_cameras(os.path.join(gt_dir, "cameras.json"))
    gt_images = [io_maps.load_png(os.path.join(gt_dir, c.image)) for c in cams]
    colors = [io_maps.load_png(os.path.join(pred_dir, f"color_{i:03d}.png"))
              for i in range(len(cams))]
    depths = alphas = normals = gt_depths = gt_normals = None
    if os.path.isdir(os.path.join(gt_dir, "depth")):
        gt_depths = [io_maps.load_f32(os.path.join(gt_dir, "depth", f"{i:03d}.f32"))
                     for i in range(len(cams))]
        depths = [io_maps.load_f32(os.path.join(pred_dir, f"depth_{i:03d}.f32"))
                  for i in range(len(cams))]
        alphas = [(d > 0).astype(float) for d in depths]
    if os.path.isdir(os.path.join(gt_dir, "normal")):
        gt_normals = [io_maps.load_f32(os.path.join(gt_dir, "normal", f"{i:03d}.f32"))
                      for i in range(len(cams))]
        normals = [io_maps.load_f32(os.path.join(pred_dir, f"normal_{i:03d}.f32"))
                   for i in range(len(cams))]
    summary, rows = evaluate.evaluate_views(
        colors, gt_images, depths=depths, gt_depths=gt_depths,
        alphas=alphas, normals=normals, gt_normals=gt_normals)
    out_csv = args.csv or os.path.join(pred_dir, "metrics.csv")
    evaluate.write_csv(out_csv, rows)
    for k, v in summary.items():
        print(f"{k}: {v:.4f}")
    return 0


def _cmd_synth(args):
    w, h = (int(x) for x in args.res.lower().split("x"))
    if w != h:
        raise SystemExit("only square resolutions are supported")
    cams, images, depths, normals, _ = synth.make_scene(
        args.scene, args.views, w, seed=args.seed, texture=args.texture)
    synth.write_dataset(args.out, cams, images, depths, normals)
    print(f"wrote {args.views} {args.scene} views at {w}x{h} to {args.out}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="qgs",
        description="Quadric Gaussian surfel splatting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit primitives to a posed dataset")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("--ckpt", required=True, help="primitive PLY checkpoint")
    p.add_argument("--cameras", required=True, help="cameras.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="compare renders against ground truth")
    p.add_argument("--pred", required=True, help="directory of rendered maps")
    p.add_argument("--gt", required=True, help="dataset directory")
    p.add_argument("--csv", help="metrics CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--scene", required=True, choices=synth.SCENES)
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--res", default="128x128", help="WxH, square")
    p.add_argument("--out", required=True)
    p.add_argument("--texture", default="checker", choices=synth.TEXTURES)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
