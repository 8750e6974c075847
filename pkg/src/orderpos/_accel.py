"""Backend selection for the hot loops.

The environment variable ``ORDERPOS_BACKEND`` picks the kernel family:
``numba`` (default when numba imports) or ``numpy`` (pure vectorized fallback).
"""

import os

_requested = os.environ.get("ORDERPOS_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"ORDERPOS_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` under the numba backend, identity decorator otherwise."""
    if BACKEND == "numba":
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap
