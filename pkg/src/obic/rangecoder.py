"""Integer range coder driven by externally supplied 16-bit CDF tables.

The coder knows nothing about probability models.  A table is an integer
array ``[0, c1, ..., 65536]`` that is strictly increasing; symbol ``s``
occupies ``[cdf[s], cdf[s+1])``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels import PROB_TOTAL


class RangeCoderError(ValueError):
    pass


class CorruptStreamError(RangeCoderError):
    pass


class PrematureEndError(CorruptStreamError):
    pass


def validate_cdf(cdf) -> np.ndarray:
    cdf = np.asarray(cdf, dtype=np.int64)
    if cdf.ndim != 1 or cdf.size < 2:
        raise RangeCoderError("CDF table needs at least one symbol")
    if cdf[0] != 0 or cdf[-1] != PROB_TOTAL:
        raise RangeCoderError(f"CDF table must span [0, {PROB_TOTAL}]")
    if np.any(np.diff(cdf) <= 0):
        raise RangeCoderError("CDF table must be strictly increasing")
    return cdf


def pack_tables(tables) -> tuple[np.ndarray, np.ndarray]:
    """Stack tables of possibly different alphabet sizes into one 2-D array.

    Short rows are padded with ``PROB_TOTAL``; the true alphabet size of each
    row is returned alongside.
    """
    if isinstance(tables, np.ndarray) and tables.ndim == 2:
        cdfs = np.ascontiguousarray(tables, dtype=np.int64)
        return cdfs, np.full(cdfs.shape[0], cdfs.shape[1] - 1, dtype=np.int64)
    tables = [np.asarray(t, dtype=np.int64) for t in tables]
    width = max((t.size for t in tables), default=2)
    cdfs = np.full((len(tables), width), PROB_TOTAL, dtype=np.int64)
    sizes = np.empty(len(tables), dtype=np.int64)
    for i, t in enumerate(tables):
        cdfs[i, : t.size] = t
        sizes[i] = t.size - 1
    return cdfs, sizes


class RangeEncoder:
    """Streaming encoder; feed symbols in chunks, then call :meth:`finish`."""

    def __init__(self):
        self._state = np.array([0, 0xFFFFFFFF, 0, 1], dtype=np.int64)
        self._chunks: list[bytes] = []
        self._finished = False

    def encode(self, symbols, tables) -> None:
        if self._finished:
            raise RangeCoderError("encoder already finished")
        symbols = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
        cdfs, sizes = pack_tables(tables)
        if cdfs.shape[0] != symbols.size:
            raise RangeCoderError(f"{symbols.size} symbols but {cdfs.shape[0]} tables")
        if symbols.size == 0:
            return
        _check_tables(cdfs, sizes)
        out = np.empty(int(self._state[3]) + 3 * symbols.size + 16, dtype=np.uint8)
        n = kernels.rc_encode(symbols, cdfs, sizes, self._state, out)
        if n < 0:
            bad = _first_bad_symbol(symbols, cdfs, sizes)
            raise RangeCoderError(f"symbol {symbols[bad]} at index {bad} has no mass in its table")
        self._chunks.append(out[:n].tobytes())

    def finish(self) -> bytes:
        if not self._finished:
            out = np.empty(int(self._state[3]) + 8, dtype=np.uint8)
            n = kernels.rc_flush(self._state, out)
            self._chunks.append(out[:n].tobytes())
            self._finished = True
        return b"".join(self._chunks)


def _check_tables(cdfs, sizes) -> None:
    rows = np.arange(cdfs.shape[0])
    if np.any(cdfs[:, 0] != 0) or np.any(cdfs[rows, sizes] != PROB_TOTAL):
        raise RangeCoderError(f"CDF tables must span [0, {PROB_TOTAL}]")
    cols = np.arange(cdfs.shape[1] - 1)
    inside = cols[None, :] < sizes[:, None]
    if np.any((np.diff(cdfs, axis=1) <= 0) & inside):
        raise RangeCoderError("CDF tables must be strictly increasing")


def _first_bad_symbol(symbols, cdfs, sizes) -> int:
    for i, s in enumerate(symbols):
        if s < 0 or s >= sizes[i] or cdfs[i, s + 1] <= cdfs[i, s]:
            return i
    return -1


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = np.frombuffer(bytes(data), dtype=np.uint8)
        if self._data.size < 5:
            raise PrematureEndError("range-coded segment shorter than its 5-byte preamble")
        code = 0
        for b in self._data[:5]:
            code = (code << 8) | int(b)
        if code > 0xFFFFFFFF:
            raise CorruptStreamError("first byte of a range-coded segment must be 0")
        self._state = np.array([code, 0xFFFFFFFF, 5], dtype=np.int64)

    def decode(self, tables) -> np.ndarray:
        cdfs, sizes = pack_tables(tables)
        out = np.empty(cdfs.shape[0], dtype=np.int64)
        if out.size == 0:
            return out
        status = kernels.rc_decode(self._data, self._state, cdfs, sizes, out)
        if status == kernels.ERR_EOF:
            raise PrematureEndError("range-coded segment ended before all symbols were decoded")
        if status != kernels.OK:
            raise CorruptStreamError("range coder invariant violated: corrupted segment")
        return out

    @property
    def bytes_consumed(self) -> int:
        return int(self._state[2])


@dataclass
class SymbolStream:
    symbols: np.ndarray
    tables: list = field(default_factory=list)


def encode_symbols(stream: SymbolStream) -> bytes:
    enc = RangeEncoder()
    enc.encode(stream.symbols, stream.tables)
    return enc.finish()


def decode_symbols(data: bytes, cdf_provider, n: int) -> np.ndarray:
    """Decode ``n`` symbols one at a time.

    ``cdf_provider(i, decoded)`` returns the table for symbol ``i`` given the
    symbols decoded so far, which is what autoregressive models need.
    """
    dec = RangeDecoder(data)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        table = np.asarray(cdf_provider(i, out[:i]), dtype=np.int64)
        out[i] = dec.decode(table[None, :])[0]
    return out
