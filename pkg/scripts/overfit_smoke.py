#!/usr/bin/env python3
"""Desk-scale convergence experiment: overfit one synthetic blurred pair.

Trains a tiny generator on a single 64x64 pair with the 5:1 critic
alternation and reports the L2 trajectory plus the PSNR gain of the
restored image over the blurred input. A healthy setup drops L2 by well
over 90% within 200 generator steps and gains several dB.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import deblurlab as dl
from deblurlab.training import TrainConfig, _batch_to_tensors, init_train_state, train_step


def smooth_image(side, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / side
    img = np.zeros((side, side, 3))
    for c in range(3):
        for _ in range(6):
            fy, fx = rng.uniform(0.5, 4.0, 2)
            ph = rng.uniform(0, 2 * np.pi, 2)
            img[:, :, c] += rng.uniform(0.2, 1.0) * np.sin(
                2 * np.pi * fy * yy + ph[0]
            ) * np.sin(2 * np.pi * fx * xx + ph[1])
    img -= img.min()
    return img / img.max()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--blur-length", type=int, default=13)
    parser.add_argument("--blur-angle", type=float, default=30.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sharp = smooth_image(64, seed=42)
    kernel = dl.make_motion_kernel(args.blur_length, args.blur_angle)
    blurred = dl.apply_blur(sharp, kernel, 0.01, seed=5)
    psnr_blurred = dl.psnr(blurred, sharp)
    print(f"PSNR(blurred, sharp) = {psnr_blurred:.2f} dB")

    cfg = TrainConfig(
        epochs=args.steps,
        lr_initial=args.lr,
        lr_final=args.lr,
        decay_start_epoch=args.steps,
        crop_scales=(64,),
        seed=args.seed,
        generator=dl.GeneratorConfig(base_channels=8, n_rfbs=2, rfb_channels=32),
        critic=dl.DiscriminatorConfig(channel_plan=(16, 32)),
        extractor=dl.FeatureExtractorConfig(weights_source="random(1)", base_width=16),
        dtype="float32",
    )
    state = init_train_state(cfg)
    batch = _batch_to_tensors([(blurred, sharp)], cfg.dtype)

    t0 = time.time()
    l2_first = None
    for step in range(args.steps):
        bundle = train_step(state, batch)
        if l2_first is None:
            l2_first = bundle.l2
        if (step + 1) % 25 == 0 or step == 0:
            print(
                f"step {step + 1:4d}  l2 {bundle.l2:.6f}  "
                f"({100 * bundle.l2 / l2_first:5.1f}% of step 1)  "
                f"adv_g {bundle.adv_g:+.4f}  gp {bundle.gp:.4f}"
            )

    with torch.no_grad():
        restored_t = state.generator(batch[0], clamp=True)
    restored = np.clip((np.transpose(restored_t[0].numpy(), (1, 2, 0)) + 1) / 2, 0, 1)
    psnr_restored = dl.psnr(restored.astype(np.float64), sharp)
    print(f"PSNR(restored, sharp) = {psnr_restored:.2f} dB "
          f"(gain {psnr_restored - psnr_blurred:+.2f} dB) in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
