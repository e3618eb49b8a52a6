#!/usr/bin/env python3
"""Fit a synthetic scene end to end and report image/geometry metrics.

Example:
    python3 scripts/fit_synthetic.py --scene sphere --views 16 --res 128 \
        --iterations 7000 --max-primitives 2000
"""

import argparse
import time

import numpy as np

from qgsplat import synth
from qgsplat.config import TrainConfig
from qgsplat.train import Trainer


def run(args):
    cams, images, depths, normals, masks = synth.make_scene(
        args.scene, args.views, args.res, seed=args.scene_seed,
        texture=args.texture)
    test = synth.make_scene(args.scene, args.test_views, args.res,
                            seed=args.scene_seed, texture=args.texture,
                            phase=0.19)
    cfg = TrainConfig(
        iterations=args.iterations,
        seed=args.seed,
        init_points=args.init_points,
        max_primitives=args.max_primitives,
        densify_grad_threshold=args.densify_grad_threshold,
        densify_until=args.densify_until,
        sh_degree=args.sh_degree,
        euclidean_density=args.euclidean,
        s3_fixed=args.s3_fixed,
        resort_off=args.resort_off,
        lambdaK_off=args.lambdaK_off,
        mv_from=args.mv_from,
        dist_from=args.dist_from,
        normal_from=args.normal_from,
        lambda_d=args.lambda_d,
        lambda_n=args.lambda_n,
        log_every=args.log_every,
    )
    tr = Trainer(cams, images, cfg)
    t0 = time.time()
    tr.fit(log=print if args.log_every else None)
    wall = time.time() - t0
    summary, rows = tr.evaluate(test[0], test[1], gt_depths=test[2],
                                gt_normals=test[3])
    print(f"scene={args.scene} seed={args.seed} prims={len(tr.prims)} "
          f"wall={wall:.1f}s")
    for k, v in summary.items():
        print(f"  test {k}: {v:.4f}")
    return tr, summary


def build_parser():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scene", default="sphere", choices=synth.SCENES)
    ap.add_argument("--texture", default="checker", choices=synth.TEXTURES)
    ap.add_argument("--views", type=int, default=16)
    ap.add_argument("--test-views", type=int, default=4)
    ap.add_argument("--res", type=int, default=128)
    ap.add_argument("--iterations", type=int, default=7000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scene-seed", type=int, default=0)
    ap.add_argument("--init-points", type=int, default=512)
    ap.add_argument("--max-primitives", type=int, default=2000)
    ap.add_argument("--densify-grad-threshold", type=float, default=2e-6)
    ap.add_argument("--densify-until", type=int, default=5000)
    ap.add_argument("--sh-degree", type=int, default=2)
    ap.add_argument("--lambda-d", type=float, default=1000.0)
    ap.add_argument("--lambda-n", type=float, default=0.05)
    ap.add_argument("--dist-from", type=int, default=3000)
    ap.add_argument("--normal-from", type=int, default=3000)
    ap.add_argument("--mv-from", type=int, default=7000)
    ap.add_argument("--euclidean", action="store_true")
    ap.add_argument("--s3-fixed", action="store_true")
    ap.add_argument("--resort-off", action="store_true")
    ap.add_argument("--lambdaK-off", action="store_true")
    ap.add_argument("--log-every", type=int, default=500)
    return ap


if __name__ == "__main__":
    run(build_parser().parse_args())
