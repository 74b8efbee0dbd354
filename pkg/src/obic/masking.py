"""Object/background masks and the layer split.

Feature-domain split: ``F_obj = M * F`` and ``F_bkg = (1 - M) * F`` with the
same ``M`` broadcast over every channel.  Pixel-domain split multiplies the
image instead (kept as an ablation mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MaskError(ValueError):
    pass


@dataclass
class PixelMask:
    bits: np.ndarray  # (height, width) uint8, 1 = object

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if self.bits.ndim != 2:
            raise MaskError(f"pixel mask must be 2-D, got shape {self.bits.shape}")
        if not np.isin(self.bits, (0, 1)).all():
            raise MaskError("pixel mask must be strictly binary")
        self.bits = self.bits.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def from_gray(cls, gray) -> "PixelMask":
        """Any nonzero pixel is object."""
        return cls((np.asarray(gray) != 0).astype(np.uint8))


@dataclass
class LatentMask:
    bits: np.ndarray  # (h, w) uint8, 1 = object

    def __post_init__(self):
        self.bits = np.asarray(self.bits)
        if self.bits.ndim != 2 or not np.isin(self.bits, (0, 1)).all():
            raise MaskError("latent mask must be a strictly binary 2-D array")
        self.bits = self.bits.astype(np.uint8)

    @property
    def h(self) -> int:
        return self.bits.shape[0]

    @property
    def w(self) -> int:
        return self.bits.shape[1]

    def complement(self) -> "LatentMask":
        return LatentMask(1 - self.bits)

    def for_layer(self, layer: str) -> np.ndarray:
        return self.bits if layer == "obj" else 1 - self.bits


def downsample_mask(pm: PixelMask, stride: int = 16) -> LatentMask:
    """Majority vote over each ``stride`` x ``stride`` block; a tie counts as object."""
    h, w = pm.bits.shape
    if h % stride or w % stride:
        raise MaskError(f"mask {h}x{w} is not divisible by {stride}")
    counts = pm.bits.reshape(h // stride, stride, w // stride, stride).sum(axis=(1, 3), dtype=np.int64)
    return LatentMask((2 * counts >= stride * stride).astype(np.uint8))


def _as_bits(mask) -> np.ndarray:
    return mask.bits if isinstance(mask, (LatentMask, PixelMask)) else np.asarray(mask)


def split_latent(features: np.ndarray, mask) -> tuple[np.ndarray, np.ndarray]:
    """(C, h, w) features -> (object part, background part)."""
    m = _as_bits(mask)
    if features.shape[-2:] != m.shape:
        raise MaskError(f"mask {m.shape} does not match feature extent {features.shape[-2:]}")
    keep = m.astype(bool)
    # zeros carry the sign of F so that obj + bkg reproduces F bit for bit
    zero = np.copysign(np.zeros_like(features), features)
    return np.where(keep, features, zero), np.where(keep, zero, features)


def merge_latents(obj: np.ndarray | None, bkg: np.ndarray | None) -> np.ndarray:
    """Elementwise sum; a missing layer counts as all zeros."""
    if obj is None and bkg is None:
        raise ValueError("merge needs at least one layer")
    if obj is None:
        return np.array(bkg, copy=True)
    if bkg is None:
        return np.array(obj, copy=True)
    if obj.shape != bkg.shape:
        raise ValueError(f"layer shapes differ: {obj.shape} vs {bkg.shape}")
    out = obj + bkg
    # -0.0 + 0.0 is +0.0; keep a negative zero so merge(split(F)) is bit-exact
    both_zero = (obj == 0) & (bkg == 0) & (np.signbit(obj) | np.signbit(bkg))
    if both_zero.any():
        out = np.where(both_zero, -np.zeros((), dtype=out.dtype), out)
    return out


def pixel_domain_split(image: np.ndarray, pm) -> tuple[np.ndarray, np.ndarray]:
    """H x W x 3 image -> (object image, background image), masked per pixel."""
    m = _as_bits(pm)
    if image.shape[:2] != m.shape:
        raise MaskError(f"mask {m.shape} does not match image {image.shape[:2]}")
    keep = m.astype(bool)[:, :, None]
    zero = np.zeros((), dtype=image.dtype)
    return np.where(keep, image, zero), np.where(keep, zero, image)
