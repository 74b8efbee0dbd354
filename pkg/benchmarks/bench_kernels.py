"""Compiled vs pure-numpy kernels: wall time and output equality.

    python benchmarks/bench_kernels.py [--symbols N] [--repeat R]

The compiled timings exclude the one-off JIT compilation (a warm-up call
runs first).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from obic import kernels
from obic.entropy import gaussian_pmf
from obic.rangecoder import pack_tables


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _encode(enc, flush, symbols, cdfs, sizes):
    state = np.array([0, 0xFFFFFFFF, 0, 1], dtype=np.int64)
    out = np.empty(symbols.size * 4 + 16, dtype=np.uint8)
    n = enc(symbols, cdfs, sizes, state, out)
    n += flush(state, out[n:])
    return out[:n].copy()


def _decode(dec, data, cdfs, sizes, n):
    state = np.array([0, 0xFFFFFFFF, 5], dtype=np.int64)
    state[0] = int.from_bytes(bytes(data[1:5]), "big")
    out = np.empty(n, dtype=np.int64)
    status = dec(data, state, cdfs, sizes, out)
    assert status == kernels.OK, status
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=20_000)
    ap.add_argument("--positions", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)

    n = args.symbols
    pmf = gaussian_pmf(rng.normal(0, 2, n), np.exp(rng.uniform(-1, 2, n)))
    tables = kernels.quantize_pmf_jit(pmf)
    cdfs, sizes = pack_tables(tables)
    symbols = np.array([rng.choice(256, p=p / p.sum()) for p in pmf[:n]], dtype=np.int64)

    c = 32
    taps = 12
    hyper = rng.normal(size=(args.positions, 2 * c))
    patches = rng.integers(-4, 5, size=(args.positions, c * taps)).astype(np.float64)
    wc, bc = rng.normal(size=(2 * c, c * taps)) * 0.05, rng.normal(size=2 * c)
    w1, b1 = rng.normal(size=(3 * c, 4 * c)) * 0.1, rng.normal(size=3 * c)
    w2, b2 = rng.normal(size=(2 * c, 3 * c)) * 0.1, rng.normal(size=2 * c)
    fusion_args = (hyper, patches, wc, bc, w1, b1, w2, b2, True, 0.01)

    data = _encode(kernels.rc_encode_jit, kernels.rc_flush_jit, symbols, cdfs, sizes)
    cases = {
        "quantize_pmf": (lambda: kernels.quantize_pmf_jit(pmf), lambda: kernels.quantize_pmf_py(pmf)),
        "rc_encode": (
            lambda: _encode(kernels.rc_encode_jit, kernels.rc_flush_jit, symbols, cdfs, sizes),
            lambda: _encode(kernels.rc_encode_py, kernels.rc_flush_py, symbols, cdfs, sizes),
        ),
        "rc_decode": (
            lambda: _decode(kernels.rc_decode_jit, data, cdfs, sizes, n),
            lambda: _decode(kernels.rc_decode_py, data, cdfs, sizes, n),
        ),
        "fusion": (lambda: kernels.fusion_jit(*fusion_args), lambda: kernels.fusion_py(*fusion_args)),
    }
    print(f"{'kernel':<14}{'compiled s':>12}{'numpy s':>12}{'speedup':>10}  identical")
    for name, (compiled, fallback) in cases.items():
        compiled()  # JIT warm-up
        t_c, out_c = _best(compiled, args.repeat)
        t_p, out_p = _best(fallback, args.repeat)
        same = np.array_equal(out_c, out_p)
        print(f"{name:<14}{t_c:>12.5f}{t_p:>12.5f}{t_p / t_c:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
