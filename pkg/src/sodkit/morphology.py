"""Binary morphology with the 3x3 square element.

``i`` iterations of the 3x3 element equal one pass with a Chebyshev ball of
radius ``i``; the fast path uses that identity with separable row/column
sliding windows over prefix counts. Dilation treats out-of-bounds pixels as
0 and erosion treats them as 1 (each operator's neutral value), so constant
masks are fixed points and ``dilate(m) == ~erode(~m)``.

Boundary distance everywhere in the package is Chebyshev distance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import as_mask

KERNEL_SIZE = 3


@dataclass(frozen=True)
class StructuringSpec:
    kernel_size: int = KERNEL_SIZE
    iterations: int = 5

    def __post_init__(self):
        if self.kernel_size != KERNEL_SIZE:
            raise ValueError(f"only a {KERNEL_SIZE}x{KERNEL_SIZE} kernel is supported")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def _spec(spec: StructuringSpec | int | None) -> StructuringSpec:
    if spec is None:
        return StructuringSpec()
    if isinstance(spec, StructuringSpec):
        return spec
    return StructuringSpec(iterations=int(spec))


def _sliding_any(mask: np.ndarray, radius: int, axis: int) -> np.ndarray:
    """1 where any pixel within ``radius`` along ``axis`` is 1 (zero padding)."""
    m = np.moveaxis(mask, axis, -1).astype(np.int32)
    n = m.shape[-1]
    csum = np.zeros(m.shape[:-1] + (n + 1,), dtype=np.int32)
    np.cumsum(m, axis=-1, out=csum[..., 1:])
    idx = np.arange(n)
    lo = np.maximum(idx - radius, 0)
    hi = np.minimum(idx + radius + 1, n)
    counts = csum[..., hi] - csum[..., lo]
    return np.moveaxis((counts > 0).astype(np.uint8), -1, axis)


def _dilate_radius(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.copy()
    return _sliding_any(_sliding_any(mask, radius, 0), radius, 1)


def dilate(mask, spec: StructuringSpec | int | None = None) -> np.ndarray:
    m = as_mask(mask)
    out = _dilate_radius(m, _spec(spec).iterations)
    out.flags.writeable = False
    return out


def erode(mask, spec: StructuringSpec | int | None = None) -> np.ndarray:
    m = as_mask(mask)
    # erosion with 1-padding is the dual of dilation with 0-padding
    out = 1 - _dilate_radius(1 - m, _spec(spec).iterations)
    out.flags.writeable = False
    return out


def expand_gt(gt, spec: StructuringSpec | int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Boundary envelope and expanded ground truth.

    The envelope is ``dilate(gt) AND NOT erode(gt)``; the expanded mask is
    the envelope united with ``gt``. Returns ``(envelope, expanded)``.
    """
    g = as_mask(gt, "gt")
    s = _spec(spec)
    envelope = dilate(g, s) & (1 - erode(g, s))
    envelope = envelope.astype(np.uint8)
    expanded = (envelope | g).astype(np.uint8)
    envelope.flags.writeable = False
    expanded.flags.writeable = False
    return envelope, expanded


def boundary_band(gt, radius: int = 10) -> np.ndarray:
    """Pixels within Chebyshev distance ``radius`` of the object boundary, both sides."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    envelope, _ = expand_gt(gt, StructuringSpec(iterations=radius))
    return envelope


# -- naive references, kept as test oracles ---------------------------------


def dilate_reference(mask, iterations: int) -> np.ndarray:
    """Literal iterated 3x3 max filter, one pixel at a time."""
    m = np.array(as_mask(mask), dtype=np.uint8)
    h, w = m.shape
    for _ in range(iterations):
        out = np.zeros_like(m)
        for r in range(h):
            for c in range(w):
                out[r, c] = m[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2].max()
        m = out
    return m


def erode_reference(mask, iterations: int) -> np.ndarray:
    """Literal iterated 3x3 min filter; outside pixels count as 1."""
    m = np.array(as_mask(mask), dtype=np.uint8)
    h, w = m.shape
    for _ in range(iterations):
        out = np.zeros_like(m)
        for r in range(h):
            for c in range(w):
                out[r, c] = m[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2].min()
        m = out
    return m


def chebyshev_ball_reference(mask, radius: int, op: str) -> np.ndarray:
    """Direct max (``op='max'``) or min filter over the radius-``radius`` square."""
    m = np.asarray(as_mask(mask), dtype=np.uint8)
    h, w = m.shape
    reduce = {"max": np.max, "min": np.min}[op]
    out = np.empty_like(m)
    for r in range(h):
        for c in range(w):
            window = m[max(r - radius, 0):r + radius + 1, max(c - radius, 0):c + radius + 1]
            out[r, c] = reduce(window)
    return out
