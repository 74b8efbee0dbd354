"""Hot inner loops: the range coder state machine, CDF quantization and context fusion.

Every kernel exists twice: ``*_py`` is plain Python/numpy and is the
reference; the compiled twin comes from running the same source through
numba.  The public names (``rc_encode`` ...) point at whichever path
:mod:`obic._jit` selected.

Range coder layout (carry-propagating, LZMA style):

* encoder state ``[low, range, cache, cache_size]``; ``low`` needs 33 bits,
  ``range`` 32 bits, so everything fits in int64.
* decoder state ``[code, range, pos]``.
* probabilities are 16-bit: every CDF row starts at 0 and ends at 65536.
"""

import numpy as np

from ._jit import njit, select

PROB_BITS = 16
PROB_TOTAL = 1 << PROB_BITS
TOP = 1 << 24
MASK32 = 0xFFFFFFFF

OK = 0
ERR_SYMBOL = -1      # symbol outside its table or zero mass
ERR_EOF = -2         # ran out of input bytes
ERR_CORRUPT = -3     # range invariant violated


def rc_encode_py(symbols, cdfs, sizes, state, out):
    """Encode ``symbols[i]`` under row ``cdfs[i]``; append bytes to ``out``.

    Returns the number of bytes written, or a negative error code.
    """
    low = int(state[0])
    rng = int(state[1])
    cache = int(state[2])
    cache_size = int(state[3])
    n_out = 0
    for i in range(symbols.shape[0]):
        s = symbols[i]
        if s < 0 or s >= sizes[i]:
            return ERR_SYMBOL
        c_lo = cdfs[i, s]
        c_hi = cdfs[i, s + 1]
        if c_hi <= c_lo:
            return ERR_SYMBOL
        r = rng >> PROB_BITS
        low += r * c_lo
        rng = r * (c_hi - c_lo)
        while rng < TOP:
            rng <<= 8
            # shift_low
            if low < 0xFF000000 or low > MASK32:
                carry = low >> 32
                temp = cache
                while True:
                    out[n_out] = (temp + carry) & 0xFF
                    n_out += 1
                    temp = 0xFF
                    cache_size -= 1
                    if cache_size == 0:
                        break
                cache = (low >> 24) & 0xFF
            cache_size += 1
            low = (low & 0x00FFFFFF) << 8
    state[0] = low
    state[1] = rng
    state[2] = cache
    state[3] = cache_size
    return n_out


def rc_flush_py(state, out):
    low = int(state[0])
    cache = int(state[2])
    cache_size = int(state[3])
    n_out = 0
    for _ in range(5):
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = cache
            while True:
                out[n_out] = (temp + carry) & 0xFF
                n_out += 1
                temp = 0xFF
                cache_size -= 1
                if cache_size == 0:
                    break
            cache = (low >> 24) & 0xFF
        cache_size += 1
        low = (low & 0x00FFFFFF) << 8
    state[0] = low
    state[2] = cache
    state[3] = cache_size
    return n_out


def rc_decode_py(data, state, cdfs, sizes, out):
    """Decode ``out.shape[0]`` symbols, row ``i`` of ``cdfs`` for symbol ``i``."""
    code = int(state[0])
    rng = int(state[1])
    pos = int(state[2])
    n_data = data.shape[0]
    for i in range(out.shape[0]):
        size = sizes[i]
        r = rng >> PROB_BITS
        value = code // r
        if value >= PROB_TOTAL:
            return ERR_CORRUPT
        lo = 0
        hi = size
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdfs[i, mid] <= value:
                lo = mid
            else:
                hi = mid
        c_lo = cdfs[i, lo]
        c_hi = cdfs[i, lo + 1]
        if value < c_lo or value >= c_hi:
            return ERR_CORRUPT
        out[i] = lo
        code -= r * c_lo
        rng = r * (c_hi - c_lo)
        while rng < TOP:
            if pos >= n_data:
                return ERR_EOF
            code = (code << 8) | int(data[pos])
            pos += 1
            rng <<= 8
        if code >= rng:
            return ERR_CORRUPT
    state[0] = code
    state[1] = rng
    state[2] = pos
    return OK


def quantize_pmf_py(pmf):
    """Map rows of non-negative masses to 16-bit CDF rows with leading 0.

    Each symbol gets ``1 + floor(p / sum * (65536 - A))`` counts and the
    leftover goes to the first most probable symbol, so every symbol keeps
    at least one count and rows total exactly 65536.
    """
    n, a = pmf.shape
    # cumsum is a sequential left-to-right sum, same as the compiled loop
    total = np.cumsum(pmf, axis=1)[:, -1]
    freq = np.floor(pmf / total[:, None] * float(PROB_TOTAL - a)).astype(np.int64) + 1
    leftover = PROB_TOTAL - freq.sum(axis=1)
    freq[np.arange(n), np.argmax(pmf, axis=1)] += leftover
    cdf = np.zeros((n, a + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def _quantize_pmf_loop(pmf):
    n, a = pmf.shape
    cdf = np.zeros((n, a + 1), dtype=np.int64)
    scale = float(PROB_TOTAL - a)
    for i in range(n):
        total = 0.0
        best = 0
        for j in range(a):
            total += pmf[i, j]
            if pmf[i, j] > pmf[i, best]:
                best = j
        acc = 0
        for j in range(a):
            acc += np.int64(np.floor(pmf[i, j] / total * scale)) + 1
            cdf[i, j + 1] = acc
        # leftover belongs to symbol ``best``: shift every boundary above it
        leftover = PROB_TOTAL - acc
        for j in range(best + 1, a + 1):
            cdf[i, j] += leftover
    return cdf


def _seq_matvec(w, x):
    """Batched ``w @ x`` with strictly left-to-right accumulation.

    ``w`` is (O, K), ``x`` is (P, K); returns (P, O).  ``cumsum`` fixes the
    summation order so the result matches the compiled loop bit for bit.
    """
    out = np.empty((x.shape[0], w.shape[0]))
    step = max(1, 2_000_000 // max(1, w.size))
    for lo in range(0, x.shape[0], step):
        prod = w[None, :, :] * x[lo : lo + step, None, :]
        out[lo : lo + step] = np.cumsum(prod, axis=2)[:, :, -1]
    return out


def fusion_py(hyper, patches, wc, bc, w1, b1, w2, b2, use_ar, leak):
    """Context fusion at P positions -> raw (mean, scale) pre-activations (P, 2C).

    ``hyper`` (P, 2C) are hyper-decoder features, ``patches`` (P, K) the
    causal neighbourhoods; with ``use_ar`` false the causal branch is zero.
    """
    if use_ar:
        ar = _seq_matvec(wc, patches) + bc[None, :]
    else:
        ar = np.zeros((hyper.shape[0], wc.shape[0]))
    h = np.concatenate((hyper, ar), axis=1)
    f1 = _seq_matvec(w1, h) + b1[None, :]
    f1 = np.where(f1 > 0, f1, f1 * leak)
    return _seq_matvec(w2, f1) + b2[None, :]


def _fusion_loop(hyper, patches, wc, bc, w1, b1, w2, b2, use_ar, leak):
    n_pos = hyper.shape[0]
    n_hyp = hyper.shape[1]
    n_ar = wc.shape[0]
    out = np.empty((n_pos, w2.shape[0]))
    h = np.empty(n_hyp + n_ar)
    f1 = np.empty(w1.shape[0])
    for p in range(n_pos):
        for k in range(n_hyp):
            h[k] = hyper[p, k]
        for o in range(n_ar):
            if use_ar:
                acc = 0.0
                for k in range(wc.shape[1]):
                    acc += wc[o, k] * patches[p, k]
                h[n_hyp + o] = acc + bc[o]
            else:
                h[n_hyp + o] = 0.0
        for o in range(w1.shape[0]):
            acc = 0.0
            for k in range(w1.shape[1]):
                acc += w1[o, k] * h[k]
            v = acc + b1[o]
            f1[o] = v if v > 0 else v * leak
        for o in range(w2.shape[0]):
            acc = 0.0
            for k in range(w2.shape[1]):
                acc += w2[o, k] * f1[k]
            out[p, o] = acc + b2[o]
    return out


rc_encode_jit = njit(rc_encode_py)
rc_flush_jit = njit(rc_flush_py)
rc_decode_jit = njit(rc_decode_py)
quantize_pmf_jit = njit(_quantize_pmf_loop)
fusion_jit = njit(_fusion_loop)

rc_encode = select(rc_encode_jit, rc_encode_py)
rc_flush = select(rc_flush_jit, rc_flush_py)
rc_decode = select(rc_decode_jit, rc_decode_py)
quantize_pmf = select(quantize_pmf_jit, quantize_pmf_py)
fusion = select(fusion_jit, fusion_py)
