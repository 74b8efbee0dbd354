"""``OBICW`` parameter checkpoints.

Layout (little-endian)::

    b"OBICW"  u8 version  u16 C  u16 C_h  u32 parameter count
    per parameter: u16 name length, UTF-8 name, u8 rank, rank x u32 extents,
                   float32 values (row-major)

The model id stored in containers is the first 8 bytes of the SHA-256 of
this serialization.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OBICW"
VERSION = 1
_HEAD = struct.Struct("<5sBHHI")


class CheckpointError(ValueError):
    pass


def serialize(networks) -> bytes:
    params = networks.parameters()
    out = bytearray(_HEAD.pack(MAGIC, VERSION, networks.channels, networks.hyper_channels, len(params)))
    for name in sorted(params):
        arr = params[name].data
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def parse(data: bytes) -> tuple[int, int, dict]:
    if len(data) < _HEAD.size or data[:5] != MAGIC:
        raise CheckpointError("not an OBICW checkpoint")
    magic, version, c, ch, count = _HEAD.unpack_from(data)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = _HEAD.size
    params = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if pos + 4 * size > len(data):
                raise CheckpointError(f"checkpoint truncated inside {name}")
            params[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError("checkpoint truncated") from exc
    return c, ch, params


def model_id(networks) -> bytes:
    return hashlib.sha256(serialize(networks)).digest()[:8]


def save(networks, path) -> None:
    Path(path).write_bytes(serialize(networks))


def load_into(networks, data: bytes) -> None:
    c, ch, params = parse(data)
    if (c, ch) != (networks.channels, networks.hyper_channels):
        raise CheckpointError(f"checkpoint is C={c}, C_h={ch}; networks are C={networks.channels}, C_h={networks.hyper_channels}")
    mine = networks.parameters()
    if set(params) != set(mine):
        missing = sorted(set(mine) ^ set(params))[:5]
        raise CheckpointError(f"parameter names differ from the networks, e.g. {missing}")
    for name, arr in params.items():
        if arr.shape != mine[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != {mine[name].shape}")
        mine[name].data = arr.astype(mine[name].dtype)


def load(path, dtype=np.float32):
    from .transforms import CodecNetworks

    data = Path(path).read_bytes()
    c, ch, _ = parse(data)
    nets = CodecNetworks(channels=c, hyper_channels=ch, dtype=dtype)
    load_into(nets, data)
    return nets
