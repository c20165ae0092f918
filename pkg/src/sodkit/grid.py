"""Shared grid data model and 8-bit PNG encoding.

Maps are plain numpy arrays indexed ``(row, column)``:

* gray map: float64 ``(H, W)`` with values in ``[0, 1]``
* binary mask: uint8 ``(H, W)`` with values in ``{0, 1}``
* tensor: float64 ``(C, H, W)``, all finite

The ``as_*`` helpers validate and normalize; they return read-only arrays so
results can be shared between threads without copying.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image


class GridError(ValueError):
    """A map does not satisfy its data-model invariants."""


class PngDecodeError(ValueError):
    """Bytes could not be decoded as a PNG image."""


class UnsupportedFormatError(PngDecodeError):
    """PNG decoded fine but its pixel format is not 8-bit gray or RGB."""


_ACCEPTED_MODES = {"L", "1", "RGB"}


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_gray(values, name: str = "map") -> np.ndarray:
    a = np.array(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise GridError(f"{name}: expected a non-empty 2-D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GridError(f"{name}: contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise GridError(f"{name}: values must lie in [0, 1]")
    return _frozen(a)


def as_mask(values, name: str = "mask") -> np.ndarray:
    a = np.asarray(values)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise GridError(f"{name}: expected a non-empty 2-D grid, got shape {a.shape}")
    if a.dtype != np.bool_ and not np.all((a == 0) | (a == 1)):
        raise GridError(f"{name}: values must be exactly 0 or 1")
    return _frozen(a.astype(np.uint8))


def as_tensor(values, name: str = "tensor") -> np.ndarray:
    a = np.array(values, dtype=np.float64)
    if a.ndim != 3 or min(a.shape) < 1:
        raise GridError(f"{name}: expected a non-empty (C, H, W) block, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GridError(f"{name}: contains non-finite values")
    return _frozen(a)


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise GridError(f"shape mismatch: {sorted(shapes)}")


def clamp(values, lo: float, hi: float) -> np.ndarray:
    return np.clip(np.asarray(values, dtype=np.float64), lo, hi)


def quantize(values) -> np.ndarray:
    """Map ``[0, 1]`` reals to 8-bit levels, rounding half away from zero."""
    v = np.asarray(values, dtype=np.float64)
    # values are non-negative, so floor(x + 0.5) is half-away-from-zero
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def binarize(gray, threshold: float) -> np.ndarray:
    """Foreground wherever ``value >= threshold``."""
    g = as_gray(gray)
    return _frozen((g >= threshold).astype(np.uint8))


def _open_png(data: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        if img.format != "PNG":
            raise PngDecodeError(f"not a PNG stream (format {img.format!r})")
        img.load()
    except PngDecodeError:
        raise
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise PngDecodeError(f"malformed PNG: {exc}") from exc
    if img.mode not in _ACCEPTED_MODES:
        raise UnsupportedFormatError(
            f"unsupported PNG pixel format {img.mode!r}; need 8-bit grayscale or RGB"
        )
    return img


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a gray map, pixel ``p`` becoming ``p / 255``.

    RGB inputs are converted to luma with the BT.601 weights (Pillow's
    ``L`` conversion). Paletted, 16-bit and alpha formats are rejected.
    """
    img = _open_png(data)
    if img.mode != "L":
        img = img.convert("L")
    pixels = np.asarray(img, dtype=np.float64)
    return _frozen(pixels / 255.0)


def decode_png_rgb(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a ``(3, H, W)`` tensor in ``[0, 1]``."""
    img = _open_png(data).convert("RGB")
    pixels = np.asarray(img, dtype=np.float64) / 255.0
    return _frozen(np.ascontiguousarray(pixels.transpose(2, 0, 1)))


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def encode_png(gray) -> bytes:
    """Encode a gray map as 8-bit grayscale PNG (``round(v * 255)``)."""
    g = as_gray(gray)
    return _png_bytes(Image.fromarray(quantize(g), mode="L"))


def encode_png_rgb(image) -> bytes:
    t = as_tensor(image, "image")
    if t.shape[0] != 3:
        raise GridError(f"image: expected 3 channels, got {t.shape[0]}")
    if t.min() < 0.0 or t.max() > 1.0:
        raise GridError("image: values must lie in [0, 1]")
    return _png_bytes(Image.fromarray(quantize(t.transpose(1, 2, 0)), mode="RGB"))


def read_gray(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


def read_mask(path, threshold: float = 0.5) -> np.ndarray:
    """Read a ground-truth PNG; anti-aliased masks are cut at ``threshold``."""
    return binarize(read_gray(path), threshold)


def read_rgb(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png_rgb(fh.read())


def write_gray(path, gray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(gray))


def write_rgb(path, image) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png_rgb(image))
