"""Backend switch for the hot kernels.

Every kernel in :mod:`tensorvote.kernels` exists twice: a loop version that
numba compiles, and a vectorized numpy version. ``TENSORVOTE_BACKEND=numpy``
(or a missing/broken numba install) selects the numpy path at import time.
"""
from __future__ import annotations

import os

_requested = os.environ.get("TENSORVOTE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"TENSORVOTE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def pick(numba_impl, numpy_impl):
    return numba_impl if BACKEND == "numba" else numpy_impl
