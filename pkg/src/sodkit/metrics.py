"""Salient-object-detection evaluation.

Conventions fixed here:

* threshold ``t`` in ``0..255`` binarizes a prediction at ``p >= t / 255``;
* precision is 1 when nothing is predicted foreground; recall is 1 when the
  ground truth is empty (the image is then flagged degenerate);
* F uses ``(1 + b2) P R / (b2 P + R)`` with ``b2 = 0.3``; ``literal=True``
  evaluates ``(1 + b)^2 P R / (b^2 P + R)`` reading the given number as ``b``;
* dataset curves are the per-threshold mean of per-image precision/recall.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .grid import GridError, as_gray, as_mask, check_same_shape, read_gray, read_mask
from .morphology import boundary_band

N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS) / 255.0
BETA_SQUARED = 0.3
MAE_B_RADIUS = 10
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class CurveSeries:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray
    degenerate: bool = False

    def rows(self) -> Iterable[tuple[int, float, float, float]]:
        for t, p, r, f in zip(self.thresholds, self.precision, self.recall, self.f):
            yield int(t), float(p), float(r), float(f)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "f"])
        for t, p, r, f in self.rows():
            w.writerow([t, repr(p), repr(r), repr(f)])
        return buf.getvalue()


def f_measure(precision, recall, beta_squared: float = BETA_SQUARED, literal: bool = False) -> np.ndarray:
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    if literal:
        num_coef, den_coef = (1.0 + beta_squared) ** 2, beta_squared**2
    else:
        num_coef, den_coef = 1.0 + beta_squared, beta_squared
    den = den_coef * p + r
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(den > 0, num_coef * p * r / np.where(den > 0, den, 1.0), 0.0)
    return f


def _curve_from_counts(tp, pp, n_pos, beta_squared, literal) -> CurveSeries:
    tp = np.asarray(tp, dtype=np.float64)
    pp = np.asarray(pp, dtype=np.float64)
    precision = np.where(pp > 0, tp / np.where(pp > 0, pp, 1.0), 1.0)
    if n_pos > 0:
        recall = tp / n_pos
    else:
        recall = np.ones(N_THRESHOLDS)
    return CurveSeries(
        thresholds=np.arange(N_THRESHOLDS),
        precision=precision,
        recall=recall,
        f=f_measure(precision, recall, beta_squared, literal),
        degenerate=n_pos == 0,
    )


def threshold_bins(pred) -> np.ndarray:
    """Index of the highest threshold each pixel passes (``p >= t/255``)."""
    p = np.asarray(pred, dtype=np.float64)
    return np.searchsorted(THRESHOLDS, p, side="right") - 1


def pr_curve(pred, gt, beta_squared: float = BETA_SQUARED, literal: bool = False) -> CurveSeries:
    """256-threshold precision/recall/F curve from cumulative histograms."""
    p = as_gray(pred, "pred")
    g = as_mask(gt, "gt")
    check_same_shape(p, g)
    bins = threshold_bins(p)
    fg = g.astype(bool)
    hist_fg = np.bincount(bins[fg], minlength=N_THRESHOLDS)
    hist_all = np.bincount(bins.ravel(), minlength=N_THRESHOLDS)
    # pixels passing threshold t are those with bin >= t
    tp = np.cumsum(hist_fg[::-1])[::-1]
    pp = np.cumsum(hist_all[::-1])[::-1]
    return _curve_from_counts(tp, pp, int(fg.sum()), beta_squared, literal)


def pr_curve_reference(pred, gt, beta_squared: float = BETA_SQUARED, literal: bool = False) -> CurveSeries:
    """One binarization pass per threshold; test oracle for :func:`pr_curve`."""
    p = np.asarray(as_gray(pred, "pred"))
    g = np.asarray(as_mask(gt, "gt")).astype(bool)
    tp = np.zeros(N_THRESHOLDS, dtype=np.int64)
    pp = np.zeros(N_THRESHOLDS, dtype=np.int64)
    for t in range(N_THRESHOLDS):
        b = p >= t / 255.0
        tp[t] = np.count_nonzero(b & g)
        pp[t] = np.count_nonzero(b)
    return _curve_from_counts(tp, pp, int(g.sum()), beta_squared, literal)


def max_f(curve: CurveSeries) -> float:
    """Largest F over the curve (first, i.e. lowest, threshold on ties)."""
    return float(curve.f[int(np.argmax(curve.f))])


def best_threshold(curve: CurveSeries) -> int:
    return int(curve.thresholds[int(np.argmax(curve.f))])


def mae(pred, gt) -> float:
    p = as_gray(pred, "pred")
    g = np.asarray(gt, dtype=np.float64)
    check_same_shape(p, g)
    return float(np.mean(np.abs(p - g)))


def mae_b(pred, gt, radius: int = MAE_B_RADIUS) -> float:
    """MAE over pixels within ``radius`` (Chebyshev) of the GT boundary; 0 if none."""
    p = as_gray(pred, "pred")
    g = as_mask(gt, "gt")
    check_same_shape(p, g)
    band = boundary_band(g, radius).astype(bool)
    if not band.any():
        return 0.0
    return float(np.mean(np.abs(p[band] - g[band])))


def ashp(pred) -> float | None:
    """Mean score of the strictly positive pixels, ``None`` if there are none."""
    p = as_gray(pred, "pred")
    pos = p[p > 0]
    if pos.size == 0:
        return None
    return float(np.mean(pos))


# -- structure measure --------------------------------------------------------


def _matlab_round(x: float) -> int:
    return int(math.floor(x + 0.5))


def _sample_std(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def _object_score(pred: np.ndarray, region: np.ndarray) -> float:
    vals = pred[region]
    if vals.size == 0:
        return 0.0
    x = float(np.mean(vals))
    return 2.0 * x / (x * x + 1.0 + _sample_std(vals) + _EPS)


def s_object(pred, gt) -> float:
    """Object-aware term: foreground/background distribution similarity."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt).astype(bool)
    fg = np.where(g, p, 0.0)
    bg = np.where(g, 0.0, 1.0 - p)
    u = float(np.mean(g))
    return u * _object_score(fg, g) + (1.0 - u) * _object_score(bg, ~g)


def _centroid(g: np.ndarray) -> tuple[int, int]:
    """1-based ``(col, row)`` centroid, rounded half away from zero."""
    rows, cols = g.shape
    total = int(g.sum())
    if total == 0:
        return _matlab_round(cols / 2), _matlab_round(rows / 2)
    col_idx = np.arange(1, cols + 1)
    row_idx = np.arange(1, rows + 1)
    x = _matlab_round(float(np.sum(g.sum(axis=0) * col_idx)) / total)
    y = _matlab_round(float(np.sum(g.sum(axis=1) * row_idx)) / total)
    return x, y


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x = float(np.mean(p))
    y = float(np.mean(g))
    sigma_x2 = float(np.sum((p - x) ** 2)) / (n - 1 + _EPS)
    sigma_y2 = float(np.sum((g - y) ** 2)) / (n - 1 + _EPS)
    sigma_xy = float(np.sum((p - x) * (g - y))) / (n - 1 + _EPS)
    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x2 + sigma_y2)
    if alpha != 0:
        # eps only guards a zero denominator; equal terms give SSIM 1 exactly
        return 1.0 if alpha == beta else alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def s_region(pred, gt) -> float:
    """Region-aware term: SSIM on the four quadrants around the GT centroid."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    h, w = g.shape
    x, y = _centroid(g)
    quads = (
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    )
    # integer quadrant areas over one division, so the weights sum to 1 exactly
    score = 0.0
    for rs, cs in quads:
        quad = p[rs, cs]
        score += quad.size * _region_ssim(quad, g[rs, cs])
    return score / (h * w)


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure ``alpha * S_o + (1 - alpha) * S_r`` for a binary GT."""
    p = as_gray(pred, "pred")
    g = as_mask(gt, "gt")
    check_same_shape(p, g)
    y = float(np.mean(g))
    if y == 0.0:
        return 1.0 - float(np.mean(p))
    if y == 1.0:
        return float(np.mean(p))
    q = alpha * s_object(p, g) + (1.0 - alpha) * s_region(p, g)
    return max(q, 0.0)


# -- dataset evaluation -------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    mae_b_radius: int = MAE_B_RADIUS
    beta_squared: float = BETA_SQUARED
    literal_f: bool = False
    s_alpha: float = 0.5
    threads: int = 1


@dataclass(frozen=True)
class ImageMetrics:
    stem: str
    mae: float
    max_f: float
    s_measure: float
    mae_b: float
    ashp: float | None
    curve: CurveSeries
    degenerate: tuple[str, ...] = ()


@dataclass
class MetricReport:
    mae: float
    max_f: float
    mean_of_max_f: float
    s_measure: float
    mae_b: float
    ashp: float | None
    a_over_m: float | None
    count: int
    curve: CurveSeries
    degenerate_images: list[dict] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    per_image: list[ImageMetrics] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "max_f": self.max_f,
            "max_f_of_mean_curve": self.max_f,
            "mean_of_max_f": self.mean_of_max_f,
            "s_measure": self.s_measure,
            "mae_b": self.mae_b,
            "ashp": self.ashp,
            "a_over_m": self.a_over_m,
            "count": self.count,
            "degenerate_images": self.degenerate_images,
            "missing": self.missing,
            "errors": self.errors,
        }

    def per_image_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stem", "mae", "max_f", "s_measure", "mae_b", "ashp", "degenerate"])
        for im in self.per_image:
            w.writerow([
                im.stem, repr(im.mae), repr(im.max_f), repr(im.s_measure), repr(im.mae_b),
                "" if im.ashp is None else repr(im.ashp), ";".join(im.degenerate),
            ])
        return buf.getvalue()


def evaluate_image(stem: str, pred, gt, config: EvalConfig | None = None) -> ImageMetrics:
    cfg = config or EvalConfig()
    p = as_gray(pred, "pred")
    g = as_mask(gt, "gt")
    check_same_shape(p, g)
    curve = pr_curve(p, g, cfg.beta_squared, cfg.literal_f)
    flags = []
    if curve.degenerate:
        flags.append("empty_gt")
    if not boundary_band(g, cfg.mae_b_radius).any():
        flags.append("empty_boundary_band")
    a = ashp(p)
    if a is None:
        flags.append("no_positive_pixels")
    return ImageMetrics(
        stem=stem,
        mae=mae(p, g),
        max_f=max_f(curve),
        s_measure=s_measure(p, g, cfg.s_alpha),
        mae_b=mae_b(p, g, cfg.mae_b_radius),
        ashp=a,
        curve=curve,
        degenerate=tuple(flags),
    )


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def aggregate(images: list[ImageMetrics], config: EvalConfig | None = None) -> MetricReport:
    """Average per-image metrics; images are reduced in stem order."""
    cfg = config or EvalConfig()
    images = sorted(images, key=lambda im: im.stem)
    n = len(images)
    if n:
        precision = np.mean([im.curve.precision for im in images], axis=0)
        recall = np.mean([im.curve.recall for im in images], axis=0)
    else:
        precision = np.ones(N_THRESHOLDS)
        recall = np.zeros(N_THRESHOLDS)
    curve = CurveSeries(
        thresholds=np.arange(N_THRESHOLDS),
        precision=precision,
        recall=recall,
        f=f_measure(precision, recall, cfg.beta_squared, cfg.literal_f),
    )
    ashps = [im.ashp for im in images if im.ashp is not None]
    mean_mae = _mean([im.mae for im in images])
    mean_ashp = _mean(ashps) if ashps else None
    if mean_ashp is None or mean_mae == 0.0:
        a_over_m = None
    else:
        a_over_m = mean_ashp / mean_mae
    return MetricReport(
        mae=mean_mae,
        max_f=max_f(curve) if n else 0.0,
        mean_of_max_f=_mean([im.max_f for im in images]),
        s_measure=_mean([im.s_measure for im in images]),
        mae_b=_mean([im.mae_b for im in images]),
        ashp=mean_ashp,
        a_over_m=a_over_m,
        count=n,
        curve=curve,
        degenerate_images=[{"stem": im.stem, "flags": list(im.degenerate)} for im in images if im.degenerate],
        per_image=images,
    )


def evaluate_pairs(pairs: Mapping[str, tuple], config: EvalConfig | None = None) -> MetricReport:
    """Evaluate in-memory ``{stem: (pred, gt)}`` pairs."""
    cfg = config or EvalConfig()
    images = []
    errors = []
    for stem in sorted(pairs):
        pred, gt = pairs[stem]
        try:
            images.append(evaluate_image(stem, pred, gt, cfg))
        except GridError as exc:
            errors.append({"stem": stem, "error": str(exc)})
    report = aggregate(images, cfg)
    report.errors = errors
    return report


_PRED_PREFIXES = ("pred_", "img_")
_GT_PREFIXES = ("gt_",)


def pair_key(stem: str, prefixes: tuple[str, ...]) -> str:
    for prefix in prefixes:
        if stem.startswith(prefix):
            return stem[len(prefix):]
    return stem


def collect_pngs(directory, prefixes: tuple[str, ...], skip: tuple[str, ...] = ()) -> dict[str, Path]:
    """Map pairing keys to PNG paths, ignoring stems that start with ``skip``."""
    out = {}
    for path in sorted(Path(directory).glob("*.png")):
        if skip and path.stem.startswith(skip):
            continue
        out[pair_key(path.stem, prefixes)] = path
    return out


def evaluate_set(pred_dir, gt_dir, config: EvalConfig | None = None) -> MetricReport:
    """Evaluate every prediction PNG against the GT PNG with the same key.

    Keys are file stems with an optional ``pred_``/``img_`` (predictions) or
    ``gt_`` (ground truth) prefix removed; ``img_`` files in the GT directory
    are input images and are ignored, so a generated set can serve as the GT
    directory directly. Unpaired files are listed in
    ``missing``; undecodable or mismatched pairs in ``errors``.
    """
    cfg = config or EvalConfig()
    preds = collect_pngs(pred_dir, _PRED_PREFIXES)
    gts = collect_pngs(gt_dir, _GT_PREFIXES, skip=("img_",))
    keys = sorted(set(preds) & set(gts))
    missing = sorted(
        [f"pred:{k}" for k in set(preds) - set(gts)] + [f"gt:{k}" for k in set(gts) - set(preds)]
    )

    def run(key):
        try:
            return evaluate_image(key, read_gray(preds[key]), read_mask(gts[key]), cfg), None
        except (GridError, ValueError) as exc:
            return None, {"stem": key, "error": str(exc)}

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        results = list(pool.map(run, keys))
    images = [im for im, _ in results if im is not None]
    report = aggregate(images, cfg)
    report.errors = [err for _, err in results if err is not None]
    report.missing = missing
    return report
