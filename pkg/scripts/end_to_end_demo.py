#!/usr/bin/env python3
"""End-to-end demo on generated data: synth -> train (tiny) -> deblur -> eval.

Everything runs through the CLI entry point, so this doubles as a living
usage example. Outputs land under the --workdir.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from deblurlab.cli import main as run_cli
from deblurlab.images import save_png


def make_sharp_images(out_dir: Path, n: int, side: int, seed: int):
    out_dir.mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(seed)
    for i in range(n):
        rng = np.random.default_rng(master.integers(0, 2**32))
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
        save_png(out_dir / f"scene{i:02d}.png", img / img.max())


def check(code: int, stage: str):
    if code != 0:
        sys.exit(f"{stage} failed with exit code {code}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_run")
    parser.add_argument("--images", type=int, default=4)
    parser.add_argument("--epochs", type=int, default=8)
    args = parser.parse_args()

    work = Path(args.workdir)
    sharp = work / "sharp"
    make_sharp_images(sharp, args.images, side=96, seed=0)

    pairs = work / "pairs"
    check(run_cli([
        "synth", "--sharp-dir", str(sharp), "--out", str(pairs),
        "--seed", "1", "--length-min", "5", "--length-max", "9",
    ]), "synth")

    train_out = work / "train"
    check(run_cli([
        "train", "--manifest", str(pairs / "manifest.jsonl"), "--out", str(train_out),
        "--seed", "3",
        "--set", f"epochs={args.epochs}", "--set", "decay_start_epoch=0",
        "--set", "lr_initial=1e-3", "--set", "lr_final=1e-4",
        "--set", "crop_scales=64", "--set", "gen_base_channels=8",
        "--set", "gen_n_rfbs=2", "--set", "gen_rfb_channels=32",
        "--set", "disc_channel_plan=16,32",
        "--set", "extractor_weights=random(2)", "--set", "extractor_base_width=16",
    ]), "train")

    restored = work / "restored"
    blurred_pngs = sorted(str(p) for p in pairs.glob("scene*.png"))
    check(run_cli([
        "deblur", "--checkpoint", str(train_out / "generator_final.ntck"),
        "--out", str(restored), *blurred_pngs,
    ]), "deblur")

    check(run_cli([
        "eval", "--checkpoint", str(train_out / "generator_final.ntck"),
        "--manifest", str(pairs / "manifest.jsonl"), "--out", str(work / "eval"),
    ]), "eval")
    print(f"demo complete; artifacts under {work}/")


if __name__ == "__main__":
    main()
