"""The ``.obic`` layered bitstream.

Layout (all integers little-endian)::

    offset size  field
    0      4     magic b"OBIC"
    4      1     version (1)
    5      1     flags: bit0 pixel-domain masking, bit1 autoregressive context
    6      1     layer count (2)
    7      1     reserved (0)
    8      4     image width  (pixels, multiple of 16)
    12     4     image height (pixels, multiple of 16)
    16     2     latent channels C
    18     2     hyper channels C_h
    20     8     model id (checkpoint hash prefix)
    28     4     mask RLE length in bytes
    32     ...   mask RLE: alternating run lengths as unsigned LEB128,
                 background run first, row-major over the latent grid
    ...    32    index: (offset u32, length u32) x 4, offsets relative to
                 the first segment byte, order obj-hyper, obj-latent,
                 bkg-hyper, bkg-latent
    ...    ...   the four segments, contiguous
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"OBIC"
VERSION = 1
LAYER_COUNT = 2
HEADER = struct.Struct("<4sBBBBIIHH8sI")
INDEX_ENTRY = struct.Struct("<II")
SEGMENTS = ("obj-hyper", "obj-latent", "bkg-hyper", "bkg-latent")
LAYER_SEGMENTS = {"obj": (0, 1), "bkg": (2, 3)}
FLAG_PIXEL_DOMAIN = 0x01
FLAG_AUTOREGRESSIVE = 0x02
LATENT_STRIDE = 16


class ContainerError(ValueError):
    pass


class TruncatedContainerError(ContainerError):
    pass


@dataclass(frozen=True)
class ContainerHeader:
    width: int
    height: int
    channels: int
    hyper_channels: int
    model_id: bytes
    pixel_domain: bool = False
    autoregressive: bool = True
    version: int = VERSION
    layer_count: int = LAYER_COUNT

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.width % LATENT_STRIDE or self.height % LATENT_STRIDE:
            raise ContainerError(f"image size {self.width}x{self.height} must be positive multiples of 16")
        if len(self.model_id) != 8:
            raise ContainerError("model id must be 8 bytes")
        if self.layer_count != LAYER_COUNT:
            raise ContainerError(f"version {VERSION} containers carry exactly {LAYER_COUNT} layers")

    @property
    def latent_shape(self) -> tuple[int, int]:
        return self.height // LATENT_STRIDE, self.width // LATENT_STRIDE

    @property
    def flags(self) -> int:
        return (FLAG_PIXEL_DOMAIN if self.pixel_domain else 0) | (FLAG_AUTOREGRESSIVE if self.autoregressive else 0)


@dataclass(frozen=True)
class Container:
    header: ContainerHeader
    mask: np.ndarray  # (h, w) uint8 latent mask
    segments: tuple  # four bytes objects, order SEGMENTS

    def __eq__(self, other):
        return (
            isinstance(other, Container)
            and self.header == other.header
            and np.array_equal(self.mask, other.mask)
            and tuple(self.segments) == tuple(other.segments)
        )

    def segment(self, name: str) -> bytes:
        return self.segments[SEGMENTS.index(name)]


# ---------------------------------------------------------------- LEB128 / RLE

def _leb128(n: int) -> bytes:
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_leb128(buf: bytes, pos: int) -> tuple[int, int]:
    value = shift = 0
    while True:
        if pos >= len(buf):
            raise TruncatedContainerError("mask RLE ends inside a run length")
        byte = buf[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise ContainerError("mask RLE run length is oversized")


def rle_encode(mask: np.ndarray) -> bytes:
    """Alternating run lengths, starting with a (possibly empty) background run."""
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    if flat.size and not np.isin(flat, (0, 1)).all():
        raise ContainerError("mask must be binary")
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = list(np.diff(bounds))
    if flat.size and flat[0] == 1:
        runs.insert(0, 0)
    return b"".join(_leb128(int(r)) for r in runs)


def rle_decode(buf: bytes, shape: tuple[int, int]) -> np.ndarray:
    total = shape[0] * shape[1]
    out = np.zeros(total, dtype=np.uint8)
    pos = filled = 0
    value = 0
    while pos < len(buf):
        run, pos = _read_leb128(buf, pos)
        if filled + run > total:
            raise ContainerError(f"mask RLE covers more than {total} cells")
        out[filled : filled + run] = value
        filled += run
        value ^= 1
    if filled != total:
        raise ContainerError(f"mask RLE covers {filled} cells, expected {total}")
    return out.reshape(shape)


# ---------------------------------------------------------------- read / write

def write_container(header: ContainerHeader, mask, segments) -> bytes:
    mask = np.asarray(getattr(mask, "bits", mask), dtype=np.uint8)
    if mask.shape != header.latent_shape:
        raise ContainerError(f"mask shape {mask.shape} does not match header latent grid {header.latent_shape}")
    segments = [bytes(s) for s in segments]
    if len(segments) != len(SEGMENTS):
        raise ContainerError(f"expected {len(SEGMENTS)} segments, got {len(segments)}")
    rle = rle_encode(mask)
    out = bytearray(
        HEADER.pack(
            MAGIC,
            header.version,
            header.flags,
            header.layer_count,
            0,
            header.width,
            header.height,
            header.channels,
            header.hyper_channels,
            bytes(header.model_id),
            len(rle),
        )
    )
    out += rle
    offset = 0
    for seg in segments:
        if len(seg) > 0xFFFFFFFF:
            raise ContainerError("segment larger than 4 GiB")
        out += INDEX_ENTRY.pack(offset, len(seg))
        offset += len(seg)
    for seg in segments:
        out += seg
    return bytes(out)


def read_container(data: bytes) -> Container:
    data = bytes(data)
    if len(data) < HEADER.size:
        if data[:4] != MAGIC[: len(data[:4])]:
            raise ContainerError("bad magic: not an OBIC container")
        raise TruncatedContainerError("container shorter than its header")
    magic, version, flags, layers, reserved, width, height, c, ch, model_id, rle_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError("bad magic: not an OBIC container")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if flags & ~(FLAG_PIXEL_DOMAIN | FLAG_AUTOREGRESSIVE):
        raise ContainerError(f"unknown flag bits 0x{flags:02x}")
    if reserved:
        raise ContainerError("reserved header byte must be 0")
    header = ContainerHeader(
        width=width,
        height=height,
        channels=c,
        hyper_channels=ch,
        model_id=model_id,
        pixel_domain=bool(flags & FLAG_PIXEL_DOMAIN),
        autoregressive=bool(flags & FLAG_AUTOREGRESSIVE),
        version=version,
        layer_count=layers,
    )
    pos = HEADER.size
    if pos + rle_len > len(data):
        raise TruncatedContainerError("container truncated inside the mask")
    rle = data[pos : pos + rle_len]
    mask = rle_decode(rle, header.latent_shape)
    if rle_encode(mask) != rle:
        raise ContainerError("mask RLE is not in canonical form")
    pos += rle_len
    index_size = INDEX_ENTRY.size * len(SEGMENTS)
    if pos + index_size > len(data):
        raise TruncatedContainerError("container truncated inside the segment index")
    entries = [INDEX_ENTRY.unpack_from(data, pos + i * INDEX_ENTRY.size) for i in range(len(SEGMENTS))]
    pos += index_size
    segments = []
    expected = 0
    for name, (offset, length) in zip(SEGMENTS, entries):
        if offset != expected:
            raise ContainerError(f"segment {name} offset {offset} breaks contiguity (expected {expected})")
        start = pos + offset
        if start + length > len(data):
            raise TruncatedContainerError(f"container truncated inside segment {name}")
        segments.append(data[start : start + length])
        expected += length
    if pos + expected != len(data):
        raise ContainerError(f"{len(data) - pos - expected} trailing bytes after the last segment")
    return Container(header, mask, tuple(segments))


def overhead_bytes(container: Container) -> int:
    return HEADER.size + len(rle_encode(container.mask)) + INDEX_ENTRY.size * len(SEGMENTS)


def extract_substream(data: bytes, layer: str) -> bytes:
    """A standalone container holding only ``layer``'s two segments."""
    if layer not in LAYER_SEGMENTS:
        raise ValueError(f"unknown layer {layer!r}")
    c = read_container(data)
    keep = LAYER_SEGMENTS[layer]
    segments = [seg if i in keep else b"" for i, seg in enumerate(c.segments)]
    return write_container(c.header, c.mask, segments)
