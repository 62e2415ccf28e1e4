"""Kernel acceleration switch.

Hot loops live in ``_kernels.py`` and are written in a loop-oriented style
that numba can compile directly.  When numba is available (and not disabled
via the ``WUSFSIM_NO_NUMBA`` environment variable) every kernel is wrapped in
``@njit``; otherwise the same source runs as plain numpy/Python, wrapped in an
``errstate`` guard so that deliberate uint64 wraparound in the RNG does not
emit overflow warnings.

Set ``WUSFSIM_NO_NUMBA=1`` to force the fallback path (used by the benchmark
and by the kernel-equivalence tests).
"""

import functools
import os

import numpy as np


def _want_numba() -> bool:
    if os.environ.get("WUSFSIM_NO_NUMBA", "").strip().lower() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _want_numba()

if NUMBA_ENABLED:
    from numba import njit

    def kernel(fn):
        return njit(cache=True, nogil=True)(fn)

else:

    def kernel(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            with np.errstate(over="ignore"):
                return fn(*args, **kwargs)

        return wrapper
