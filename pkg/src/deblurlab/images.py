"""Image I/O and value-range conversions.

Images travel through the package as H x W x 3 float arrays. Two value
ranges are used: [0, 1] for files and the blur model, [-1, 1] for network
inputs and outputs. Conversions between the two are always explicit.
PNG is the only write format; JPEG is accepted read-only.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParameterError, ShapeError

READABLE_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG/JPEG file to an H x W x 3 float64 array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    """Write an H x W x 3 array in [0, 1] as an 8-bit PNG."""
    check_image(pixels)
    data = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def check_image(pixels: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> None:
    """Validate shape and declared value range; raises on violation."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got shape {pixels.shape}")
    if pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ShapeError(f"empty image: shape {pixels.shape}")
    if pixels.min() < lo - 1e-9 or pixels.max() > hi + 1e-9:
        raise ParameterError(
            f"pixel values [{pixels.min():.6g}, {pixels.max():.6g}] are outside "
            f"the declared range [{lo}, {hi}]"
        )


def unit_to_signed(pixels: np.ndarray) -> np.ndarray:
    """Map [0, 1] to the network domain [-1, 1]."""
    return pixels * 2.0 - 1.0


def signed_to_unit(pixels: np.ndarray) -> np.ndarray:
    """Map the network domain [-1, 1] back to [0, 1]."""
    return (pixels + 1.0) / 2.0


def hwc_to_nchw(pixels: np.ndarray) -> np.ndarray:
    """H x W x 3 -> 1 x 3 x H x W."""
    return np.transpose(pixels, (2, 0, 1))[None]


def nchw_to_hwc(batch: np.ndarray) -> np.ndarray:
    """1 x 3 x H x W -> H x W x 3."""
    if batch.shape[0] != 1:
        raise ShapeError(f"expected a single-image batch, got {batch.shape}")
    return np.transpose(batch[0], (1, 2, 0))
