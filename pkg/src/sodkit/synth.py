"""Deterministic cluttered-scene generator for desk-scale experiments.

Each item draws from its own Philox stream keyed by ``(seed, index)``, so
any item can be regenerated alone and sets can be built in parallel.

Scenes share the texture frequency between object and background; the
``contrast`` knob scales the foreground offset, which at low values leaves
the object distinguishable only by a faint mean shift.

manifest.json schema (version 1)::

    {
      "version": 1,
      "base_seed": int,
      "count": int,
      "template": {...},           # SetTemplate fields
      "items": [
        {"index": int, "image": "img_0000.png", "gt": "gt_0000.png",
         "spec": {...},            # SceneSpec fields
         "area_fraction": float}
      ]
    }
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import write_gray, write_rgb

SHAPE_KINDS = ("blob", "ring", "bar", "multi")
MIN_AREA = 0.05
MAX_AREA = 0.6
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    size: int = 64
    shape_kind: str = "blob"
    contrast: float = 0.5
    noise_sigma: float = 0.03
    texture_period: float = 8.0

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"shape_kind must be one of {SHAPE_KINDS}")
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError("contrast must lie in [0, 1]")
        if not 0.0 <= self.noise_sigma <= 0.5:
            raise ValueError("noise_sigma must lie in [0, 0.5]")
        if self.size < 16:
            raise ValueError("size must be >= 16")
        if self.texture_period <= 0:
            raise ValueError("texture_period must be positive")


@dataclass(frozen=True)
class SetTemplate:
    size: int = 64
    contrast: float = 0.15
    noise_sigma: float = 0.03
    texture_period: float = 8.0
    kind_probs: dict = field(default_factory=lambda: {k: 0.25 for k in SHAPE_KINDS})

    def __post_init__(self):
        if set(self.kind_probs) - set(SHAPE_KINDS):
            raise ValueError(f"unknown shape kinds in {sorted(self.kind_probs)}")
        total = sum(self.kind_probs.values())
        if total <= 0 or any(v < 0 for v in self.kind_probs.values()):
            raise ValueError("kind_probs must be non-negative with a positive sum")


def _rng(*key: int) -> np.random.Generator:
    seed = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(seed))


def item_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed & 0xFFFFFFFFFFFFFFFF, index]).generate_state(1, np.uint64)[0])


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return (yy + 0.5) / size, (xx + 0.5) / size


def _blob(rng, yy, xx, scale=1.0) -> np.ndarray:
    cy, cx = rng.uniform(0.35, 0.65, size=2)
    a, b = rng.uniform(0.15, 0.33, size=2) * scale
    phi = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    theta = np.arctan2(v, u)
    wobble = 1.0 + 0.12 * np.sin(rng.integers(2, 6) * theta + rng.uniform(0, 2 * np.pi))
    return (u / a) ** 2 + (v / b) ** 2 <= wobble**2


def _ring(rng, yy, xx) -> np.ndarray:
    cy, cx = rng.uniform(0.4, 0.6, size=2)
    outer = rng.uniform(0.25, 0.4)
    inner = outer * rng.uniform(0.35, 0.6)
    r = np.hypot(yy - cy, xx - cx)
    return (r <= outer) & (r >= inner)


def _bar(rng, yy, xx) -> np.ndarray:
    cy, cx = rng.uniform(0.4, 0.6, size=2)
    length = rng.uniform(0.5, 0.85)
    width = rng.uniform(0.14, 0.25)
    phi = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    return (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)


def _multi(rng, yy, xx) -> np.ndarray:
    n = int(rng.integers(2, 4))
    mask = np.zeros(yy.shape, dtype=bool)
    centers = []
    tries = 0
    while len(centers) < n:
        c = rng.uniform(0.2, 0.8, size=2)
        tries += 1
        if all(np.hypot(*(c - o)) > 0.38 for o in centers):
            centers.append(c)
        elif tries > 50:
            centers, tries = [], 0
    for cy, cx in centers:
        r = rng.uniform(0.1, 0.16)
        mask |= np.hypot(yy - cy, xx - cx) <= r
    return mask


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask)
    if n <= 1:
        return mask
    sizes = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
    return labels == (1 + int(np.argmax(sizes)))


def _draw_mask(rng, kind: str, size: int) -> np.ndarray:
    yy, xx = _grid(size)
    for _ in range(100):
        if kind == "blob":
            m = _largest_component(_blob(rng, yy, xx))
        elif kind == "ring":
            m = _largest_component(_ring(rng, yy, xx))
        elif kind == "bar":
            m = _largest_component(_bar(rng, yy, xx))
        else:
            m = _multi(rng, yy, xx)
        if MIN_AREA <= m.mean() <= MAX_AREA:
            return m
    raise RuntimeError(f"could not draw a {kind} mask within the area bounds")


def _texture(rng, size: int, period: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phi = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    k = 2 * np.pi / period
    return np.sin(k * (xx * np.cos(phi) + yy * np.sin(phi)) + phase)


def generate(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(image (3, H, W) in [0, 1], gt (H, W) in {0, 1})``."""
    rng = _rng(spec.seed)
    n = spec.size
    gt = _draw_mask(rng, spec.shape_kind, n)

    bg_color = rng.uniform(0.25, 0.45, size=3)
    fg_color = 0.4 * rng.uniform(0.85, 1.15, size=3)
    bg_tex = _texture(rng, n, spec.texture_period)
    fg_tex = _texture(rng, n, spec.texture_period)
    background = bg_color[:, None, None] + 0.08 * bg_tex[None]
    foreground = fg_color[:, None, None] + 0.08 * fg_tex[None]
    image = background + spec.contrast * foreground * gt[None]
    image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape) if spec.noise_sigma else image
    return np.clip(image, 0.0, 1.0), gt.astype(np.uint8)


def sample_spec(template: SetTemplate, base_seed: int, index: int) -> SceneSpec:
    """Item spec for ``index``; the shape kind is drawn from the template."""
    kinds = [k for k in SHAPE_KINDS if template.kind_probs.get(k, 0) > 0]
    probs = np.array([template.kind_probs[k] for k in kinds], dtype=np.float64)
    rng = _rng(base_seed, index, 1)
    kind = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]
    return SceneSpec(
        seed=item_seed(base_seed, index),
        size=template.size,
        shape_kind=kind,
        contrast=template.contrast,
        noise_sigma=template.noise_sigma,
        texture_period=template.texture_period,
    )


def generate_set(count: int, base_seed: int, template: SetTemplate, out_dir, threads: int = 1) -> dict:
    """Write ``img_%04d.png``/``gt_%04d.png`` pairs plus ``manifest.json``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def make(index):
        spec = sample_spec(template, base_seed, index)
        image, gt = generate(spec)
        write_rgb(out / f"img_{index:04d}.png", image)
        write_gray(out / f"gt_{index:04d}.png", gt.astype(np.float64))
        return {
            "index": index,
            "image": f"img_{index:04d}.png",
            "gt": f"gt_{index:04d}.png",
            "spec": asdict(spec),
            "area_fraction": float(gt.mean()),
        }

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        items = list(pool.map(make, range(count)))
    manifest = {
        "version": MANIFEST_VERSION,
        "base_seed": base_seed,
        "count": count,
        "template": asdict(template),
        "items": items,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def generate_items(count: int, base_seed: int, template: SetTemplate) -> list[tuple[np.ndarray, np.ndarray]]:
    """In-memory variant of :func:`generate_set`."""
    return [generate(sample_spec(template, base_seed, i)) for i in range(count)]
