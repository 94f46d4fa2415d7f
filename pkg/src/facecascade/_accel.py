"""Numba switch.

Set ``FACECASCADE_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag
is read once at import time.
"""

import os

_FLAG = "FACECASCADE_DISABLE_NUMBA"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True, nogil=True)`` when numba is usable, else identity."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
