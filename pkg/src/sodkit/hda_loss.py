"""Hierarchical difference-aware (HDA) loss with closed-form gradients.

Every loss returns a :class:`LossValueGrad` carrying the scalar value and the
derivative with respect to each prediction pixel. Gradients are exact for
the implemented expressions; there is no autodiff.

Weight map conventions:

* ``R_ij`` is the ``side x side`` square at ``(i, j)`` covering rows
  ``i - side//2 .. i + (side - 1 - side//2)`` (for even ``side`` the extra row
  and column lie before the pixel), clipped at the image border.
* In normalized mode ``w_d = |mean_R(D) - D_ij|`` with ``D`` the dilated GT,
  likewise ``w_e`` on the eroded GT, and ``omega = w_d + w_e``; this is
  bounded by 2. Raw mode returns the sums of differences
  ``|sum_R (D_xy - D_ij)|``, i.e. the normalized value times the window area.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridError, as_gray, as_mask, check_same_shape
from .integral import box_sum
from .morphology import StructuringSpec, dilate, erode

DEFAULT_LEVEL_ALPHAS = (1.0, 0.8, 0.6, 0.4)


class ContractError(ValueError):
    """Inputs violate a loss-function contract (shape, level count, ...)."""


@dataclass(frozen=True)
class HdaConfig:
    neighborhood_side: int = 30
    morph_iterations: int = 5
    lam: float = 5.0
    clamp_eps: float = 1e-7
    normalize_neighborhood: bool = True

    def __post_init__(self):
        if self.neighborhood_side < 1:
            raise ValueError("neighborhood_side must be >= 1")
        if self.morph_iterations < 0:
            raise ValueError("morph_iterations must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 < self.clamp_eps < 0.1:
            raise ValueError("clamp_eps must lie in (0, 0.1)")


@dataclass(frozen=True)
class LevelWeights:
    alpha: tuple[float, float, float, float] = DEFAULT_LEVEL_ALPHAS
    beta: float = 1.0

    def __post_init__(self):
        if len(self.alpha) != 4:
            raise ValueError("need exactly four level weights (levels 2..5)")
        if any(a <= 0 for a in self.alpha) or self.beta <= 0:
            raise ValueError("level weights must be positive")


@dataclass(frozen=True)
class LossValueGrad:
    value: float
    grad: np.ndarray
    notes: tuple[str, ...] = ()

    def __add__(self, other: LossValueGrad) -> LossValueGrad:
        return LossValueGrad(self.value + other.value, self.grad + other.grad, self.notes + other.notes)

    def scaled(self, k: float) -> LossValueGrad:
        return LossValueGrad(k * self.value, k * self.grad, self.notes)


@dataclass(frozen=True)
class TotalLoss:
    """Components of ``L = L_c + beta * sum_i alpha_i * L_hda(P_i)``.

    ``levels`` holds the unscaled per-level HDA losses for levels 2..5;
    ``ts_grad`` and ``os_grads`` are derivatives of the *total* with respect
    to each input map.
    """

    total: float
    ts: LossValueGrad
    levels: tuple[LossValueGrad, ...]
    l_c: float
    l_f: float
    ts_grad: np.ndarray
    os_grads: tuple[np.ndarray, ...]
    notes: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "l_c": self.l_c,
            "l_f": self.l_f,
            "levels": {f"p{lvl}": lv.value for lvl, lv in zip(range(2, 6), self.levels)},
            "notes": list(self.notes),
        }


def _window_offsets(side: int) -> tuple[int, int]:
    before = side // 2
    return before, side - 1 - before


def _checked(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = as_gray(pred, "pred")
    g = as_mask(gt, "gt")
    try:
        check_same_shape(p, g)
    except GridError as exc:
        raise ContractError(str(exc)) from None
    return p, g.astype(np.float64)


def weight_map(gt, config: HdaConfig | None = None) -> np.ndarray:
    """Per-pixel HDA weights ``omega`` computed with summed-area tables."""
    cfg = config or HdaConfig()
    g = as_mask(gt, "gt")
    spec = StructuringSpec(iterations=cfg.morph_iterations)
    before, after = _window_offsets(cfg.neighborhood_side)
    omega = np.zeros(g.shape, dtype=np.float64)
    for m in (dilate(g, spec), erode(g, spec)):
        sums, area = box_sum(m, before, after)
        # integer sums of a {0,1} mask are exact; only the final step is float
        diff = sums - area * m.astype(np.int64)
        if cfg.normalize_neighborhood:
            omega += np.abs(diff / area)
        else:
            omega += np.abs(diff).astype(np.float64)
    return omega


def weight_map_reference(gt, config: HdaConfig | None = None) -> np.ndarray:
    """Double-loop evaluation of the weight map; O(H*W*side^2)."""
    cfg = config or HdaConfig()
    g = as_mask(gt, "gt")
    spec = StructuringSpec(iterations=cfg.morph_iterations)
    before, after = _window_offsets(cfg.neighborhood_side)
    h, w = g.shape
    omega = np.zeros((h, w))
    for m in (dilate(g, spec), erode(g, spec)):
        for i in range(h):
            for j in range(w):
                total = 0
                count = 0
                for x in range(max(i - before, 0), min(i + after + 1, h)):
                    for y in range(max(j - before, 0), min(j + after + 1, w)):
                        total += int(m[x, y]) - int(m[i, j])
                        count += 1
                omega[i, j] += abs(total / count) if cfg.normalize_neighborhood else abs(total)
    return omega


def _bce_terms(p: np.ndarray, g: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel BCE and its derivative, with the clamp applied to ``p``."""
    pc = np.clip(p, eps, 1.0 - eps)
    # g is binary, so only one of the two log terms is live per pixel
    fg = g > 0.5
    term = -np.log(np.where(fg, pc, 1.0 - pc))
    dterm = np.where(fg, -1.0 / pc, 1.0 / (1.0 - pc))
    dterm[(p < eps) | (p > 1.0 - eps)] = 0.0
    return term, dterm


# Batch kernels: reduce over the last two axes so the trainer can push a
# whole (N, H, W) stack through in one call. ``wts=None`` is the unweighted
# form; it performs the same operations in the same order minus the weight
# multiply, so lambda=0 reproduces it bit for bit.

_AXES = (-2, -1)


def bce_kernel(p, g, wts=None, eps: float = 1e-7) -> tuple[np.ndarray, np.ndarray]:
    term, dterm = _bce_terms(p, g, eps)
    if wts is None:
        n = p.shape[-2] * p.shape[-1]
        return term.sum(axis=_AXES) / n, dterm / n
    norm = wts.sum(axis=_AXES)
    return (wts * term).sum(axis=_AXES) / norm, wts * dterm / norm[..., None, None]


def iou_kernel(p, g, wts=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(value, grad, empty)``; ``empty`` marks zero-union maps."""
    if wts is None:
        inter = (g * p).sum(axis=_AXES)
        union = (g + p - g * p).sum(axis=_AXES)
        d_inter, d_union = g, 1.0 - g
    else:
        inter = (wts * (g * p)).sum(axis=_AXES)
        union = (wts * (g + p - g * p)).sum(axis=_AXES)
        d_inter, d_union = wts * g, wts * (1.0 - g)
    empty = union == 0.0
    safe = np.where(empty, 1.0, union)
    value = np.where(empty, 0.0, 1.0 - inter / safe)
    u = safe[..., None, None]
    i = inter[..., None, None]
    grad = -(d_inter * u - i * d_union) / (u * u)
    grad = np.where(empty[..., None, None], 0.0, grad)
    return value, grad, empty


def _check_omega(omega, shape) -> np.ndarray:
    om = np.asarray(omega, dtype=np.float64)
    if om.shape != shape:
        raise ContractError(f"omega shape {om.shape} does not match prediction {shape}")
    if np.any(om < 0) or not np.all(np.isfinite(om)):
        raise ContractError("omega must be finite and non-negative")
    return om


_EMPTY_NOTE = ("iou: empty gt and empty prediction",)


def weighted_bce(pred, gt, omega, lam: float = 5.0, clamp_eps: float = 1e-7) -> LossValueGrad:
    p, g = _checked(pred, gt)
    wts = 1.0 + lam * _check_omega(omega, p.shape)
    value, grad = bce_kernel(p, g, wts, clamp_eps)
    return LossValueGrad(float(value), grad)


def bce(pred, gt, clamp_eps: float = 1e-7) -> LossValueGrad:
    """Unweighted mean BCE."""
    p, g = _checked(pred, gt)
    value, grad = bce_kernel(p, g, None, clamp_eps)
    return LossValueGrad(float(value), grad)


def weighted_iou(pred, gt, omega, lam: float = 5.0) -> LossValueGrad:
    p, g = _checked(pred, gt)
    wts = 1.0 + lam * _check_omega(omega, p.shape)
    value, grad, empty = iou_kernel(p, g, wts)
    return LossValueGrad(float(value), grad, _EMPTY_NOTE if empty else ())


def iou(pred, gt) -> LossValueGrad:
    """Unweighted soft IoU loss."""
    p, g = _checked(pred, gt)
    value, grad, empty = iou_kernel(p, g, None)
    return LossValueGrad(float(value), grad, _EMPTY_NOTE if empty else ())


def hda_level_loss(pred, gt, config: HdaConfig | None = None, omega=None) -> LossValueGrad:
    """Weighted BCE plus weighted IoU sharing one weight map.

    Pass a precomputed ``omega`` to skip the weight-map computation.
    """
    cfg = config or HdaConfig()
    if omega is None:
        omega = weight_map(gt, cfg)
    return weighted_bce(pred, gt, omega, cfg.lam, cfg.clamp_eps) + weighted_iou(pred, gt, omega, cfg.lam)


def bce_iou_loss(pred, gt, clamp_eps: float = 1e-7) -> LossValueGrad:
    return bce(pred, gt, clamp_eps) + iou(pred, gt)


def ts_branch_loss(pred, expanded_gt, clamp_eps: float = 1e-7) -> LossValueGrad:
    """Target-separation loss: plain BCE + IoU against the expanded GT."""
    return bce_iou_loss(pred, expanded_gt, clamp_eps)


def total_loss(
    ts_pred,
    expanded_gt,
    os_preds,
    gt,
    weights: LevelWeights | None = None,
    config: HdaConfig | None = None,
    omega=None,
) -> TotalLoss:
    """Full objective over the TS prediction and the four OS levels.

    ``os_preds`` is ordered by level 2, 3, 4, 5, all at GT resolution.
    """
    wts = weights or LevelWeights()
    cfg = config or HdaConfig()
    os_preds = list(os_preds)
    if len(os_preds) != 4:
        raise ContractError(f"expected 4 OS predictions (levels 2..5), got {len(os_preds)}")
    if omega is None:
        omega = weight_map(gt, cfg)
    ts = ts_branch_loss(ts_pred, expanded_gt, cfg.clamp_eps)
    levels = tuple(hda_level_loss(p, gt, cfg, omega) for p in os_preds)
    l_f = 0.0
    for a, lv in zip(wts.alpha, levels):
        l_f += a * lv.value
    notes = ts.notes + tuple(n for lv in levels for n in lv.notes)
    return TotalLoss(
        total=ts.value + wts.beta * l_f,
        ts=ts,
        levels=levels,
        l_c=ts.value,
        l_f=l_f,
        ts_grad=ts.grad,
        os_grads=tuple(wts.beta * a * lv.grad for a, lv in zip(wts.alpha, levels)),
        notes=notes,
    )
