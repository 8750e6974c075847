"""Kernel families.  ``ORDERPOS_BACKEND`` selects which one ``active`` points to."""

from .._accel import BACKEND, HAVE_NUMBA
from . import _numpy as numpy_kernels

if HAVE_NUMBA:
    from . import _numba as numba_kernels
else:  # pragma: no cover
    numba_kernels = None

active = numba_kernels if BACKEND == "numba" else numpy_kernels

__all__ = ["BACKEND", "active", "numba_kernels", "numpy_kernels"]
