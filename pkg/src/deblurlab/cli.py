"""Command-line surface: dataset synthesis, training, deblurring, evaluation.

Exit codes: 0 success; 2 usage/parameter/config problems; 3 I/O and
checkpoint problems (including partially failed deblur batches); 4
non-finite numerics. Every run writes a resolved-config snapshot next to
its outputs so it can be reproduced from the snapshot plus the seed.
Environment variables are never consulted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import blur, metrics
from . import training as train_mod
from .errors import (
    CheckpointError,
    ConfigError,
    NumericalError,
    ParameterError,
    ShapeError,
)
from .images import load_image, save_png
from .networks import build_generator

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

log = logging.getLogger(__name__)


def _write_snapshot(out_dir: Path, name: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    params = blur.BlurParams(
        length_min=args.length_min,
        length_max=args.length_max,
        angle_min=args.angle_min,
        angle_max=args.angle_max,
        noise_sigma=args.noise_sigma,
    )
    out_dir = Path(args.out)
    manifest = blur.synthesize_pairs(args.sharp_dir, out_dir, params, args.seed)
    _write_snapshot(
        out_dir,
        "synth_config.json",
        {
            "command": "synth",
            "sharp_dir": str(args.sharp_dir),
            "out": str(out_dir),
            "seed": args.seed,
            "params": asdict(params),
            "pairs": manifest.pairs,
            "total_images": manifest.total_images,
            "skipped": manifest.skipped,
        },
    )
    print(
        f"synthesized {manifest.pairs} pairs ({manifest.total_images} images), "
        f"skipped {manifest.skipped}; manifest at {out_dir / blur.MANIFEST_FILENAME}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    config = train_mod.parse_config_file(args.config, overrides)
    out_dir = Path(args.out)
    _write_snapshot(
        out_dir,
        "train_config.json",
        {"command": "train", "out": str(out_dir), "resume": args.resume,
         "val_manifest": args.val_manifest, **train_mod.resolved_config_dict(config)},
    )
    manifest = blur.PairManifest.load(args.manifest)
    val_manifest = blur.PairManifest.load(args.val_manifest) if args.val_manifest else None
    final = train_mod.train(
        config, manifest, out_dir, resume=args.resume, val_manifest=val_manifest
    )
    print(f"training complete; final generator checkpoint at {final}")
    return EXIT_OK


def cmd_deblur(args) -> int:
    store = metrics.generator_store_from_checkpoint(args.checkpoint)
    generator = build_generator(store)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_snapshot(
        out_dir,
        "deblur_config.json",
        {
            "command": "deblur",
            "checkpoint": str(args.checkpoint),
            "inputs": [str(p) for p in args.inputs],
            "out": str(out_dir),
        },
    )
    failures = 0
    for path in args.inputs:
        path = Path(path)
        try:
            blurred = load_image(path)
            restored, seconds = metrics.restore_image(generator, blurred)
            out_path = out_dir / (path.stem + ".png")
            save_png(out_path, restored)
            print(f"{path} -> {out_path} ({seconds:.3f}s)")
        except (OSError, ParameterError, ShapeError) as exc:
            log.error("failed on %s: %s", path, exc)
            failures += 1
    if failures:
        print(f"{failures} input(s) failed", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = blur.PairManifest.load(args.manifest)
    report = metrics.evaluate(args.checkpoint, manifest)
    out_dir = Path(args.out)
    json_path, text_path = report.save(out_dir)
    _write_snapshot(
        out_dir,
        "eval_config.json",
        {
            "command": "eval",
            "checkpoint": str(args.checkpoint),
            "manifest": str(args.manifest),
            "out": str(out_dir),
        },
    )
    print(report.to_text_table())
    print(f"report written to {json_path} and {text_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deblurlab",
        description="Motion-deblurring laboratory: synthesize blurred datasets, "
        "train the restoration network, deblur images, evaluate quality.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a blurred counterpart per sharp image")
    p_synth.add_argument("--sharp-dir", required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--length-min", type=int, default=16)
    p_synth.add_argument("--length-max", type=int, default=40)
    p_synth.add_argument("--angle-min", type=float, default=0.0)
    p_synth.add_argument("--angle-max", type=float, default=360.0)
    p_synth.add_argument("--noise-sigma", type=float, default=0.01)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="run the training protocol over a manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--config", default=None, help="flat key = value config file")
    p_train.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override a config key"
    )
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--resume", default=None, help="training checkpoint to resume")
    p_train.add_argument(
        "--val-manifest", default=None,
        help="paired manifest scored per checkpoint epoch; keeps best_generator.ntck",
    )
    p_train.set_defaults(func=cmd_train)

    p_deblur = sub.add_parser("deblur", help="restore one or more blurred images")
    p_deblur.add_argument("--checkpoint", required=True)
    p_deblur.add_argument("--out", required=True)
    p_deblur.add_argument("inputs", nargs="+")
    p_deblur.set_defaults(func=cmd_deblur)

    p_eval = sub.add_parser("eval", help="PSNR/SSIM/timing report over a paired manifest")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
