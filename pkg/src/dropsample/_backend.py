"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` version and a vectorized
numpy version.  ``DROPSAMPLE_DISABLE_NUMBA=1`` forces the numpy path; it is
also used automatically when numba cannot be imported.
"""
import os

_DISABLED = os.environ.get("DROPSAMPLE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA


def njit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def use_numba():
    # read at call time so tests and benchmarks can flip ``USE_NUMBA``
    return USE_NUMBA
