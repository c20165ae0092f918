"""Summed-area tables and clipped box-window statistics."""
from __future__ import annotations

import numpy as np


def integral_image(values: np.ndarray) -> np.ndarray:
    """Summed-area table with a leading row and column of zeros.

    ``S[r, c]`` is the sum of ``values[:r, :c]``, so any rectangle sum is
    four lookups. Integer inputs stay integer so sums of masks are exact.
    """
    v = np.asarray(values)
    acc = np.int64 if v.dtype.kind in "biu" else np.float64
    s = np.zeros((v.shape[0] + 1, v.shape[1] + 1), dtype=acc)
    np.cumsum(np.cumsum(v, axis=0, dtype=acc), axis=1, dtype=acc, out=s[1:, 1:])
    return s


def window_bounds(n: int, before: int, after: int) -> tuple[np.ndarray, np.ndarray]:
    """Clipped half-open ``[lo, hi)`` index ranges of a sliding window."""
    idx = np.arange(n)
    return np.maximum(idx - before, 0), np.minimum(idx + after + 1, n)


def box_sum(values: np.ndarray, before: int, after: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sum over the window ``[i-before, i+after] x [j-before, j+after]``.

    Windows are clipped at the borders, never padded. Returns the sums and
    the number of pixels actually inside each clipped window.
    """
    if after is None:
        after = before
    v = np.asarray(values)
    h, w = v.shape
    s = integral_image(v)
    r0, r1 = window_bounds(h, before, after)
    c0, c1 = window_bounds(w, before, after)
    sums = (
        s[np.ix_(r1, c1)] - s[np.ix_(r0, c1)] - s[np.ix_(r1, c0)] + s[np.ix_(r0, c0)]
    )
    area = np.outer(r1 - r0, c1 - c0)
    return sums, area


def box_mean(values: np.ndarray, radius: int) -> np.ndarray:
    sums, area = box_sum(np.asarray(values, dtype=np.float64), radius)
    return sums / area


def box_std(values: np.ndarray, radius: int) -> np.ndarray:
    """Population standard deviation over clipped ``(2r+1)^2`` windows."""
    v = np.asarray(values, dtype=np.float64)
    # variance is shift invariant; centering curbs cancellation
    v = v - v.mean()
    mean = box_mean(v, radius)
    mean_sq = box_mean(v * v, radius)
    return np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
