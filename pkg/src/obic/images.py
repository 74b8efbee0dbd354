"""PNG/PGM reading and writing.

Images are float64 ``H x W x 3`` arrays in [0, 1].  Masks load as
:class:`PixelMask` with any nonzero pixel counted as object.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .masking import PixelMask


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    return rgb / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(image)).save(Path(path))


def load_mask(path) -> PixelMask:
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L") if im.mode not in ("1", "L", "I", "I;16") else im)
    return PixelMask.from_gray(gray)


def save_mask(mask, path) -> None:
    bits = mask.bits if isinstance(mask, PixelMask) else np.asarray(mask)
    Image.fromarray((bits != 0).astype(np.uint8) * 255).save(Path(path))
