"""Flat-structuring-element grey morphology on 1-D signals.

The structuring element occupies offsets ``0 <= k < size``. Samples outside
the signal are ignored (the dilation treats them as -inf, the erosion as
+inf), which keeps the pair adjoint so the closing stays extensive and
idempotent right up to the array edges.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def dilate(x, size: int) -> np.ndarray:
    """``out[n] = max(x[n-size+1 .. n])``."""
    x = np.asarray(x, dtype=np.float64)
    if size < 1:
        raise ValueError("structuring element size must be >= 1")
    if size == 1 or x.size == 0:
        return x.copy()
    return ndimage.maximum_filter1d(x, size, mode="constant", cval=-np.inf, origin=(size - 1) // 2)


def erode(x, size: int) -> np.ndarray:
    """``out[n] = min(x[n .. n+size-1])``."""
    x = np.asarray(x, dtype=np.float64)
    if size < 1:
        raise ValueError("structuring element size must be >= 1")
    if size == 1 or x.size == 0:
        return x.copy()
    return ndimage.minimum_filter1d(x, size, mode="constant", cval=np.inf, origin=-(size // 2))


def closing(x, size: int) -> np.ndarray:
    return erode(dilate(x, size), size)


def opening(x, size: int) -> np.ndarray:
    return dilate(erode(x, size), size)
