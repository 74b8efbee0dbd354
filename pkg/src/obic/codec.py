"""Encode an image + object mask into an ``.obic`` container and back.

After the shared analysis transform and the mask split, the object and
background layers are coded by fully independent pipelines (hyper latent
with the factorized model, then the latent with the conditional model),
which run on a two-worker thread pool.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .container import (
    LAYER_SEGMENTS,
    ContainerHeader,
    extract_substream,
    read_container,
    write_container,
)
from .entropy import (
    ALPHABET_MIN,
    active_positions,
    build_cdf_tables,
    quantize,
    symbol_index,
)
from .masking import LatentMask, PixelMask, downsample_mask, merge_latents, pixel_domain_split, split_latent
from .rangecoder import CorruptStreamError, RangeDecoder, RangeEncoder
from .transforms import LATENT_STRIDE, LAYERS, GeometryError, hyper_extent

MASK_DOMAINS = ("feature", "pixel")


class ModelMismatchError(ValueError):
    pass


@dataclass
class LayerCode:
    hyper_bytes: bytes = b""
    latent_bytes: bytes = b""
    hyper: np.ndarray | None = None
    latent: np.ndarray | None = None
    est_hyper_bits: float = 0.0
    est_latent_bits: float = 0.0
    clip_count: int = 0
    table_hashes: list = field(default_factory=list)


@dataclass
class EncodeResult:
    data: bytes
    layers: dict
    latent_mask: np.ndarray

    @property
    def clip_count(self) -> int:
        return sum(c.clip_count for c in self.layers.values())

    def estimated_bits(self) -> dict:
        out = {}
        for layer, code in self.layers.items():
            out[f"{layer}-hyper"] = code.est_hyper_bits
            out[f"{layer}-latent"] = code.est_latent_bits
        return out

    def actual_bits(self) -> dict:
        out = {}
        for layer, code in self.layers.items():
            out[f"{layer}-hyper"] = 8 * len(code.hyper_bytes)
            out[f"{layer}-latent"] = 8 * len(code.latent_bytes)
        return out


@dataclass
class DecodeResult:
    image: np.ndarray
    latents: dict
    hyper: dict
    table_hashes: dict


def _table_hash(cdf_rows: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(cdf_rows, dtype="<i8").tobytes()).hexdigest()


def _hyper_order(shape):
    """Channel index of each hyper symbol in coding order (raster, channels innermost)."""
    c, h, w = shape
    return np.tile(np.arange(c), h * w)


def _check_image(image: np.ndarray, pm: PixelMask):
    if image.ndim != 3 or image.shape[2] != 3:
        raise GeometryError(f"expected an H x W x 3 image, got {image.shape}")
    h, w = image.shape[:2]
    if h == 0 or w == 0 or h % LATENT_STRIDE or w % LATENT_STRIDE:
        raise GeometryError(f"image {w}x{h} must be a positive multiple of {LATENT_STRIDE} in both dimensions")
    if pm.bits.shape != (h, w):
        raise GeometryError(f"mask {pm.bits.shape[::-1]} does not match image {w}x{h}")


def _encode_layer(nets, layer, y_layer, active, autoregressive, record_tables) -> LayerCode:
    code = LayerCode(
        hyper=np.zeros((nets.hyper_channels, *hyper_extent(*active.shape)), np.int64),
        latent=np.zeros(y_layer.shape, dtype=np.int64),
    )
    if not active.any():
        return code
    models = nets.layer(layer)

    zq = quantize(nets.hyper_analyze(y_layer, layer), "round")
    code.hyper = zq.values
    pmf_h = models.factorized.pmf()
    chan = _hyper_order(zq.values.shape)
    sym_h = symbol_index(zq.values.transpose(1, 2, 0).ravel())
    enc = RangeEncoder()
    enc.encode(sym_h, build_cdf_tables(pmf_h)[chan])
    code.hyper_bytes = enc.finish()
    code.est_hyper_bits = float(-np.log2(pmf_h[chan, sym_h]).sum())

    ctx = nets.hyper_synthesize(zq.values.astype(nets.dtype), layer, active.shape)
    yq = quantize(y_layer, "round", mask=active, layer=layer)
    code.latent = yq.values
    pos = active_positions(active)
    coder = models.conditional.coder(autoregressive)
    pmf = coder.pmf(ctx, yq.values, pos)
    cdf = build_cdf_tables(pmf)
    sym = symbol_index(yq.values[:, pos[:, 0], pos[:, 1]].T.ravel())
    enc = RangeEncoder()
    enc.encode(sym, cdf)
    code.latent_bytes = enc.finish()
    code.est_latent_bits = float(-np.log2(pmf[np.arange(sym.size), sym]).sum())
    code.clip_count = zq.clip_count + yq.clip_count
    if record_tables:
        c = nets.channels
        code.table_hashes = [_table_hash(cdf[i * c : (i + 1) * c]) for i in range(len(pos))]
    return code


def _split(nets, image, pm, latent_mask, mask_domain):
    if mask_domain == "feature":
        return split_latent(nets.analyze(image), latent_mask)
    if mask_domain == "pixel":
        img_obj, img_bkg = pixel_domain_split(image, pm)
        # re-mask so skip-coded positions stay exactly zero
        y_obj, _ = split_latent(nets.analyze(img_obj), latent_mask)
        _, y_bkg = split_latent(nets.analyze(img_bkg), latent_mask)
        return y_obj, y_bkg
    raise ValueError(f"mask domain must be one of {MASK_DOMAINS}, got {mask_domain!r}")


def encode(
    image: np.ndarray,
    pixel_mask,
    networks,
    autoregressive: bool = True,
    mask_domain: str = "feature",
    record_tables: bool = False,
    parallel: bool = True,
) -> EncodeResult:
    image = np.asarray(image, dtype=np.float64)
    pm = pixel_mask if isinstance(pixel_mask, PixelMask) else PixelMask.from_gray(pixel_mask)
    _check_image(image, pm)
    lm = downsample_mask(pm, LATENT_STRIDE)
    y_obj, y_bkg = _split(networks, image, pm, lm, mask_domain)
    jobs = {
        "obj": (y_obj, lm.bits),
        "bkg": (y_bkg, lm.complement().bits),
    }

    def run(layer):
        y, active = jobs[layer]
        return _encode_layer(networks, layer, y, active, autoregressive, record_tables)

    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            layers = dict(zip(LAYERS, pool.map(run, LAYERS)))
    else:
        layers = {layer: run(layer) for layer in LAYERS}

    header = ContainerHeader(
        width=image.shape[1],
        height=image.shape[0],
        channels=networks.channels,
        hyper_channels=networks.hyper_channels,
        model_id=checkpoint.model_id(networks),
        pixel_domain=mask_domain == "pixel",
        autoregressive=autoregressive,
    )
    segments = [
        layers["obj"].hyper_bytes,
        layers["obj"].latent_bytes,
        layers["bkg"].hyper_bytes,
        layers["bkg"].latent_bytes,
    ]
    return EncodeResult(write_container(header, lm.bits, segments), layers, lm.bits)


def count_clips(image, pixel_mask, networks, mask_domain: str = "feature", latent_mask=None) -> int:
    """Elements the encoder clips to the alphabet, recomputed without coding."""
    image = np.asarray(image, dtype=np.float64)
    pm = pixel_mask if isinstance(pixel_mask, PixelMask) else PixelMask.from_gray(pixel_mask)
    _check_image(image, pm)
    lm = LatentMask(latent_mask) if latent_mask is not None else downsample_mask(pm, LATENT_STRIDE)
    parts = dict(zip(LAYERS, _split(networks, image, pm, lm, mask_domain)))
    total = 0
    for layer in LAYERS:
        active = lm.for_layer(layer)
        if not active.any():
            continue
        total += quantize(networks.hyper_analyze(parts[layer], layer), "round").clip_count
        total += quantize(parts[layer], "round", mask=active).clip_count
    return total


def encode_image(image, pixel_mask, networks, **kwargs) -> bytes:
    return encode(image, pixel_mask, networks, **kwargs).data


def _decode_layer(nets, layer, hyper_bytes, latent_bytes, active, autoregressive):
    h, w = active.shape
    latent = np.zeros((nets.channels, h, w), dtype=np.int64)
    hyper = np.zeros((nets.hyper_channels, *hyper_extent(h, w)), dtype=np.int64)
    hashes = []
    if not active.any() or (not hyper_bytes and not latent_bytes):
        return latent, hyper, hashes
    if not hyper_bytes or not latent_bytes:
        raise CorruptStreamError(f"{layer} layer has only one of its two segments")
    models = nets.layer(layer)

    chan = _hyper_order(hyper.shape)
    tables_h = build_cdf_tables(models.factorized.pmf())
    sym_h = RangeDecoder(hyper_bytes).decode(tables_h[chan])
    hyper = (sym_h + ALPHABET_MIN).reshape(hyper.shape[1], hyper.shape[2], hyper.shape[0]).transpose(2, 0, 1)
    ctx = nets.hyper_synthesize(hyper.astype(nets.dtype), layer, active.shape)

    coder = models.conditional.coder(autoregressive)
    pos = active_positions(active)
    dec = RangeDecoder(latent_bytes)
    c = nets.channels
    if autoregressive:
        for i, j in pos:
            cdf = build_cdf_tables(coder.pmf(ctx, latent, [(i, j)]))
            latent[:, i, j] = dec.decode(cdf) + ALPHABET_MIN
            hashes.append(_table_hash(cdf))
    else:
        cdf = build_cdf_tables(coder.pmf(ctx, latent, pos))
        sym = dec.decode(cdf).reshape(len(pos), c)
        latent[:, pos[:, 0], pos[:, 1]] = (sym + ALPHABET_MIN).T
        hashes = [_table_hash(cdf[k * c : (k + 1) * c]) for k in range(len(pos))]
    return latent, hyper, hashes


def decode(data: bytes, networks, parallel: bool = True) -> DecodeResult:
    container = read_container(data)
    hdr = container.header
    if (hdr.channels, hdr.hyper_channels) != (networks.channels, networks.hyper_channels):
        raise ModelMismatchError(
            f"container was coded with C={hdr.channels}, C_h={hdr.hyper_channels}; "
            f"networks have C={networks.channels}, C_h={networks.hyper_channels}"
        )
    if hdr.model_id != checkpoint.model_id(networks):
        raise ModelMismatchError("container model id does not match the supplied weights")
    lm = LatentMask(container.mask)

    def run(layer):
        hi, li = LAYER_SEGMENTS[layer]
        return _decode_layer(
            networks, layer, container.segments[hi], container.segments[li], lm.for_layer(layer), hdr.autoregressive
        )

    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            out = dict(zip(LAYERS, pool.map(run, LAYERS)))
    else:
        out = {layer: run(layer) for layer in LAYERS}
    latents = {layer: out[layer][0] for layer in LAYERS}
    merged = merge_latents(latents["obj"], latents["bkg"])
    image = networks.synthesize(merged.astype(networks.dtype))
    return DecodeResult(
        image=image,
        latents=latents,
        hyper={layer: out[layer][1] for layer in LAYERS},
        table_hashes={layer: out[layer][2] for layer in LAYERS},
    )


def decode_image(data: bytes, networks) -> np.ndarray:
    return decode(data, networks).image


def decode_layer(data: bytes, networks, layer: str) -> np.ndarray:
    return decode(extract_substream(data, layer), networks).image
