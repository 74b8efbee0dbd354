"""Synthetic scenes and corpus handling.

A corpus is a directory of ``<stem>.png`` images, each with a
``<stem>_mask.png`` (or ``.pgm``) object mask next to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .images import load_image, load_mask, save_image, save_mask
from .masking import PixelMask

MASK_SUFFIXES = ("_mask.png", "_mask.pgm")


class CorpusError(ValueError):
    pass


@dataclass
class Sample:
    name: str
    image: np.ndarray  # H x W x 3, float64 in [0, 1]
    mask: PixelMask


def _smooth_field(rng, size, octaves=3):
    """Sum of a few random low-frequency cosines, roughly in [-1, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.zeros((size, size))
    for k in range(octaves):
        fy, fx = rng.uniform(0.3, 1.5, 2) * (k + 1)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase) / (k + 1)
    return out / 1.8


def synthetic_scene(rng: np.random.Generator, size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """One ``size`` x ``size`` scene: a textured object on a smooth background.

    Returns (image, binary mask).  The object covers at least one 16 x 16
    block by majority, so both layers are non-empty at latent resolution.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    base = rng.uniform(0.2, 0.8, 3)
    tilt = rng.uniform(-0.25, 0.25, (3, 2))
    bg = base[None, None, :] + (tilt[:, 0] * (yy / size - 0.5)[..., None] + tilt[:, 1] * (xx / size - 0.5)[..., None])
    bg += 0.08 * _smooth_field(rng, size)[..., None] * rng.uniform(0.5, 1.0, 3)

    cy, cx = rng.uniform(0.35, 0.65, 2) * size
    ry, rx = rng.uniform(0.2, 0.34, 2) * size
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = (np.cos(theta) * dx + np.sin(theta) * dy) / rx
    v = (-np.sin(theta) * dx + np.cos(theta) * dy) / ry
    if rng.random() < 0.5:
        inside = u * u + v * v <= 1.0
    else:
        inside = (np.abs(u) <= 0.85) & (np.abs(v) <= 0.85)

    color = rng.uniform(0.0, 1.0, 3)
    period = rng.uniform(5, 12)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (u * rx) / period)
    fg = color[None, None, :] * (0.75 + 0.25 * stripes[..., None])
    image = np.where(inside[..., None], fg, bg)
    image += rng.normal(0, 0.01, image.shape)
    mask = inside.astype(np.uint8)
    # guarantee an object cell at latent resolution
    c0, c1 = int(cy) // 16 * 16, int(cx) // 16 * 16
    mask[c0 : c0 + 16, c1 : c1 + 16] |= 1
    image[c0 : c0 + 16, c1 : c1 + 16] = np.where(
        inside[c0 : c0 + 16, c1 : c1 + 16, None], image[c0 : c0 + 16, c1 : c1 + 16], fg[c0 : c0 + 16, c1 : c1 + 16]
    )
    return np.clip(image, 0.0, 1.0), mask


def write_corpus(directory, count: int, size: int = 64, seed: int = 0, prefix: str = "scene") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        image, mask = synthetic_scene(rng, size)
        path = directory / f"{prefix}{i:03d}.png"
        save_image(image, path)
        save_mask(mask, directory / f"{prefix}{i:03d}_mask.png")
        paths.append(path)
    return paths


def _mask_for(image_path: Path) -> Path | None:
    for suffix in MASK_SUFFIXES:
        candidate = image_path.with_name(image_path.stem + suffix)
        if candidate.exists():
            return candidate
    return None


def load_corpus(directory) -> list[Sample]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"corpus directory {directory} does not exist")
    samples = []
    for path in sorted(directory.glob("*.png")):
        if path.stem.endswith("_mask"):
            continue
        mask_path = _mask_for(path)
        if mask_path is None:
            raise CorpusError(f"{path.name} has no mask ({path.stem}_mask.png)")
        image, mask = load_image(path), load_mask(mask_path)
        if mask.bits.shape != image.shape[:2]:
            raise CorpusError(f"{path.name}: mask {mask.bits.shape} does not match image {image.shape[:2]}")
        samples.append(Sample(path.stem, image, mask))
    if not samples:
        raise CorpusError(f"corpus {directory} holds no image/mask pairs")
    return samples


def bundled(name: str) -> Path:
    """Path of a bundled data directory: ``corpus``, ``heldout`` or ``fixtures``."""
    return Path(str(resources.files("obic") / "data" / name))


def random_crop(sample: Sample, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    h, w = sample.image.shape[:2]
    if h < size or w < size:
        raise CorpusError(f"{sample.name} ({w}x{h}) is smaller than the {size}px crop")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    image = sample.image[y : y + size, x : x + size]
    mask = sample.mask.bits[y : y + size, x : x + size]
    if rng.random() < 0.5:
        image, mask = image[:, ::-1], mask[:, ::-1]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def synthetic_samples(count: int, size: int = 64, seed: int = 0, prefix: str = "synth") -> list[Sample]:
    """In-memory scenes, quantized to 8 bits like a written corpus would be."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        image, mask = synthetic_scene(rng, size)
        out.append(Sample(f"{prefix}{i:03d}", np.round(image * 255.0) / 255.0, PixelMask(mask)))
    return out
