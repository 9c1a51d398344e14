"""Linear-motion blur kernels, the forward blur model, and paired datasets.

The forward model is: blurred = clamp(kernel * sharp + gaussian_noise, 0, 1),
where ``*`` is a same-size sliding-window correlation with reflect padding.
Kernels are normalized anti-aliased line segments (the point-spread function
of straight uniform motion).

Rasterization contract: a kernel of length L places L sample points spaced
exactly one pixel apart along the motion direction, centered on the kernel
grid, and deposits each point onto its four neighboring cells with bilinear
weights, then normalizes to unit sum. The convention is symmetric about the
center, so a kernel equals its 180-degree rotation. Length 1 degenerates to
the 1x1 identity kernel.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ParameterError, ShapeError
from .images import READABLE_SUFFIXES, check_image, load_image, save_png

log = logging.getLogger(__name__)

MANIFEST_FILENAME = "manifest.jsonl"


@dataclass(frozen=True)
class BlurKernel:
    """A k x k point-spread function for linear motion of a given length/angle."""

    weights: np.ndarray
    length_px: int
    angle_deg: float

    @property
    def side(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class BlurParams:
    """Sampling ranges for synthetic motion blur."""

    length_min: int = 16
    length_max: int = 40
    angle_min: float = 0.0
    angle_max: float = 360.0
    noise_sigma: float = 0.01

    def __post_init__(self):
        if not (1 <= self.length_min <= self.length_max):
            raise ParameterError(
                f"need 1 <= length_min <= length_max, got {self.length_min}..{self.length_max}"
            )
        if self.angle_max < self.angle_min:
            raise ParameterError("angle_max must be >= angle_min")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass(frozen=True)
class PairEntry:
    sharp_path: str
    blurred_path: str
    length_px: int
    angle_deg: float
    seed: int


@dataclass
class PairManifest:
    """One blurred image per sharp image, plus bookkeeping counts."""

    entries: list[PairEntry] = field(default_factory=list)
    skipped: int = 0

    @property
    def pairs(self) -> int:
        return len(self.entries)

    @property
    def total_images(self) -> int:
        return 2 * len(self.entries)

    def save(self, path: str | Path) -> None:
        lines = []
        for e in self.entries:
            lines.append(
                json.dumps(
                    {
                        "sharp_path": e.sharp_path,
                        "blurred_path": e.blurred_path,
                        "length_px": e.length_px,
                        "angle_deg": e.angle_deg,
                        "seed": e.seed,
                    },
                    sort_keys=True,
                )
            )
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path: str | Path) -> "PairManifest":
        entries = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            entries.append(
                PairEntry(
                    sharp_path=d["sharp_path"],
                    blurred_path=d["blurred_path"],
                    length_px=int(d["length_px"]),
                    angle_deg=float(d["angle_deg"]),
                    seed=int(d["seed"]),
                )
            )
        return cls(entries=entries)


def kernel_side_for_length(length_px: int) -> int:
    """Smallest odd integer >= length_px + 2 (anti-aliasing margin)."""
    side = length_px + 2
    return side if side % 2 == 1 else side + 1


def make_motion_kernel(length_px: int, angle_deg: float) -> BlurKernel:
    """Rasterize a normalized linear-motion kernel.

    See the module docstring for the exact sampling/splatting contract.
    """
    if int(length_px) != length_px or length_px < 1:
        raise ParameterError(f"length_px must be a positive integer, got {length_px!r}")
    length_px = int(length_px)
    angle_deg = float(angle_deg) % 360.0

    if length_px == 1:
        return BlurKernel(np.ones((1, 1), dtype=np.float64), 1, angle_deg)

    side = kernel_side_for_length(length_px)
    center = (side - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    # Sample offsets are symmetric about 0, so theta and theta+180 coincide.
    t = np.arange(length_px, dtype=np.float64) - (length_px - 1) / 2.0
    xs = center + t * np.cos(theta)
    ys = center + t * np.sin(theta)

    grid = np.zeros((side, side), dtype=np.float64)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    for dy in (0, 1):
        for dx in (0, 1):
            w = (fy if dy else 1.0 - fy) * (fx if dx else 1.0 - fx)
            np.add.at(grid, (y0 + dy, x0 + dx), w)

    grid /= grid.sum()
    return BlurKernel(grid, length_px, angle_deg)


def apply_blur(
    sharp: np.ndarray, kernel: BlurKernel, noise_sigma: float, seed: int
) -> np.ndarray:
    """Blur a [0, 1] image with a kernel and add seeded Gaussian noise.

    Same-size output with reflect padding; deterministic for a fixed seed.
    """
    check_image(sharp)
    if noise_sigma < 0:
        raise ParameterError(f"noise_sigma must be >= 0, got {noise_sigma}")
    k = kernel.side
    h, w = sharp.shape[:2]
    if k > h or k > w:
        raise ParameterError(f"kernel side {k} exceeds image size {h}x{w}")

    if k == 1:
        out = sharp * float(kernel.weights[0, 0])
    else:
        pad = k // 2
        x = torch.from_numpy(np.transpose(sharp, (2, 0, 1))[None]).to(torch.float64)
        x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
        weight = torch.from_numpy(kernel.weights)[None, None].expand(3, 1, k, k)
        y = F.conv2d(x, weight, groups=3)
        out = np.transpose(y[0].numpy(), (1, 2, 0))

    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def list_sharp_images(sharp_dir: str | Path) -> list[Path]:
    sharp_dir = Path(sharp_dir)
    if not sharp_dir.is_dir():
        raise ParameterError(f"sharp_dir is not a directory: {sharp_dir}")
    files = [p for p in sharp_dir.iterdir() if p.suffix.lower() in READABLE_SUFFIXES]
    return sorted(files)


def synthesize_pairs(
    sharp_dir: str | Path, out_dir: str | Path, params: BlurParams, seed: int
) -> PairManifest:
    """Blur every readable image in ``sharp_dir`` and write the pairs.

    Lengths are sampled uniformly over integers [length_min, length_max],
    angles uniformly over [angle_min, angle_max). Each image gets its own
    derived seed (recorded in the manifest), so reruns are byte-identical
    and per-image work is order-independent. Unreadable images and images
    smaller than their sampled kernel are skipped with a warning.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = list_sharp_images(sharp_dir)

    master = np.random.default_rng(seed)
    per_image_seeds = [int(s) for s in master.integers(0, 2**63, size=len(files))]

    manifest = PairManifest()
    used_names: set[str] = set()
    for path, img_seed in zip(files, per_image_seeds):
        rng = np.random.default_rng(img_seed)
        length = int(rng.integers(params.length_min, params.length_max + 1))
        # Upper bound exclusive: 0 and 360 degrees describe the same motion.
        angle = float(rng.uniform(params.angle_min, params.angle_max))
        try:
            sharp = load_image(path)
            kernel = make_motion_kernel(length, angle)
            blurred = apply_blur(sharp, kernel, params.noise_sigma, img_seed)
        except (OSError, ParameterError, ShapeError) as exc:
            log.warning("skipping %s: %s", path, exc)
            manifest.skipped += 1
            continue
        name = path.stem + ".png"
        if name in used_names:
            i = 1
            while f"{path.stem}_{i}.png" in used_names:
                i += 1
            name = f"{path.stem}_{i}.png"
        used_names.add(name)
        blurred_path = out_dir / name
        save_png(blurred_path, blurred)
        manifest.entries.append(
            PairEntry(
                sharp_path=str(path),
                blurred_path=str(blurred_path),
                length_px=length,
                angle_deg=angle,
                seed=img_seed,
            )
        )
    manifest.save(out_dir / MANIFEST_FILENAME)
    return manifest
