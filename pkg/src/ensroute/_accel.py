"""Numba switch.

Set ``ENSROUTE_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""
import os

DISABLED = os.environ.get("ENSROUTE_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED

njit_kwargs = {"nogil": True, "cache": False}


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return _numba.njit(**njit_kwargs)(fn)
