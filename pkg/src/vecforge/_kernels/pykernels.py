"""Numpy implementation of the order-statistic kernels.

Fallback lane used when the compiled extension is unavailable.  Both lanes
must produce bitwise-identical float64 results: the interpolation is
evaluated as ``lo + (hi - lo) * f`` in double precision in both.
"""

import numpy as np

BACKEND = "python"


def _index_fraction(n: int, p: float) -> tuple[int, float]:
    # L = 1 + (n - 1) * p on the 1-indexed sorted sequence.
    pos = 1.0 + (n - 1) * p
    k = int(pos)
    return k, pos - k


def quantile_flat(values: np.ndarray, p: float) -> float:
    """Interpolated p-quantile of a 1-D float64 array (input left intact)."""
    s = np.sort(values)
    n = s.shape[0]
    k, f = _index_fraction(n, p)
    if k >= n or f == 0.0:
        return float(s[k - 1])
    lo = float(s[k - 1])
    hi = float(s[k])
    return lo + (hi - lo) * f


def quantile_across(stack: np.ndarray, p: float) -> np.ndarray:
    """Per-position interpolated p-quantile down axis 0 of an (n, m) array."""
    s = np.sort(stack, axis=0)
    n = s.shape[0]
    k, f = _index_fraction(n, p)
    if k >= n or f == 0.0:
        return s[k - 1].copy()
    lo = s[k - 1]
    hi = s[k]
    return lo + (hi - lo) * f
