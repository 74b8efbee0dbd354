"""Switch between numba-compiled kernels and their numpy/Python fallbacks.

Set ``OBIC_DISABLE_NUMBA=1`` before importing :mod:`obic` to force the
fallback path.  Both paths execute the same integer/float operations in the
same order, so coded bytes never depend on which one ran.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

DISABLED = os.environ.get("OBIC_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not DISABLED


def njit(fn):
    """Compile ``fn`` in nopython mode; return the compiled dispatcher.

    Always compiles, regardless of the env flag, so the benchmark can compare
    both paths in one process.  Use :func:`select` to pick the active one.
    """
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def select(compiled, fallback):
    return compiled if USE_NUMBA else fallback
