"""Rate and quality numbers for a coded image."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from . import codec
from .container import LAYER_SEGMENTS, overhead_bytes, read_container
from .msssim import msssim

# Display-only numbers for a full-scale model on natural photos.  Desk-scale
# models are not expected to reach them.
REFERENCE_OPERATING_POINT = {"bpp": 0.0648, "msssim": 0.8992, "psnr_db": 22.71}


@dataclass
class EvalReport:
    width: int
    height: int
    bits_total: int
    bits_obj: int
    bits_bkg: int
    bits_overhead: int
    psnr_db: float
    msssim: float
    clip_count: int

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def bpp(self, part: str = "total") -> Fraction:
        """Exact bits per pixel of ``total``, ``obj``, ``bkg`` or ``overhead``."""
        return Fraction(getattr(self, f"bits_{part}"), self.pixels)

    @property
    def bpp_total(self) -> float:
        return self.bits_total / self.pixels

    @property
    def bpp_obj(self) -> float:
        return self.bits_obj / self.pixels

    @property
    def bpp_bkg(self) -> float:
        return self.bits_bkg / self.pixels

    @property
    def bpp_overhead(self) -> float:
        return self.bits_overhead / self.pixels

    def to_json_dict(self) -> dict:
        """The report fields; an infinite PSNR is written as the string ``"inf"``."""
        return {
            "bpp_total": self.bpp_total,
            "bpp_obj": self.bpp_obj,
            "bpp_bkg": self.bpp_bkg,
            "bpp_overhead": self.bpp_overhead,
            "psnr_db": self.psnr_db if math.isfinite(self.psnr_db) else "inf",
            "msssim": self.msssim,
            "clip_count": self.clip_count,
        }

    def as_dict(self) -> dict:
        return asdict(self)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """RGB PSNR in dB; identical inputs give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def evaluate(original: np.ndarray, data: bytes, networks, pixel_mask=None, reconstruction=None) -> EvalReport:
    """Decode ``data`` and score it against ``original``.

    ``pixel_mask`` is only needed to recount clipping for pixel-domain
    containers; without it the latent mask is upsampled instead.
    """
    original = np.asarray(original, dtype=np.float64)
    container = read_container(data)
    hdr = container.header
    if original.shape[:2] != (hdr.height, hdr.width):
        raise ValueError(f"original is {original.shape[1]}x{original.shape[0]}, container is {hdr.width}x{hdr.height}")
    if reconstruction is None:
        reconstruction = codec.decode(data, networks).image
    layer_bits = {
        layer: 8 * sum(len(container.segments[i]) for i in idx) for layer, idx in LAYER_SEGMENTS.items()
    }
    if pixel_mask is None:
        pixel_mask = np.kron(container.mask, np.ones((16, 16), dtype=np.uint8))
    clips = codec.count_clips(
        original, pixel_mask, networks, "pixel" if hdr.pixel_domain else "feature", latent_mask=container.mask
    )
    return EvalReport(
        width=hdr.width,
        height=hdr.height,
        bits_total=8 * len(data),
        bits_obj=layer_bits["obj"],
        bits_bkg=layer_bits["bkg"],
        bits_overhead=8 * overhead_bytes(container),
        psnr_db=psnr(original, reconstruction),
        msssim=msssim(original, reconstruction),
        clip_count=clips,
    )
