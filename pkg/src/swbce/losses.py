"""Label-weighted, prediction-weighted and symmetrised cross-entropy losses.

All three losses share the per-pixel cross-entropy term

    c_i = -[y_i log p_i + (1 - y_i) log(1 - p_i)]

and differ only in the per-pixel weight that multiplies it:

* ``label_loss`` (WBCE): edge pixels get ``alpha = |Y-|/|Y|``, background
  pixels get ``lambda_label * (1 - alpha)``.
* ``pred_loss``: every pixel gets
  ``p_i * I_N / N + (1 - p_i) * lambda_pred * I_P / N`` where
  ``I_P = sum(p)`` and ``I_N = N - I_P``.
* ``swbce_loss``: ``(label + b * pred) / (1 + b)``.

Weights are always computed per map from the *unclamped* prediction, so the
degenerate all-0 / all-1 predictions give exactly zero prediction weights.
Only the logarithms see the clamped value ``clip(p, eps, 1 - eps)``; the
cross-entropy derivative is zero where the clamp is active.

Reductions use ``numpy.sum`` over a C-contiguous float64 array, which is a
deterministic pairwise tree for a given shape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyLevelList, InvalidSpec
from .maps import as_binary_map, as_soft_map, check_same_shape

__all__ = [
    "GradMode",
    "Normalization",
    "LossConfig",
    "LossResult",
    "WeightMaps",
    "MultiLevelResult",
    "compute_label_weights",
    "compute_pred_weights",
    "label_loss",
    "pred_loss",
    "swbce_loss",
    "multi_level_loss",
    "get_loss",
]


class GradMode(str, enum.Enum):
    DETACHED = "detached"
    FULL = "full"


class Normalization(str, enum.Enum):
    PAPER_SUM = "sum"
    PER_PIXEL_MEAN = "mean"


@dataclass(frozen=True)
class LossConfig:
    lambda_label: float = 1.1
    lambda_pred: float = 1.1
    balance_b: float = 1.0
    clamp_eps: float = 1e-7
    grad_mode: GradMode = GradMode.DETACHED
    normalization: Normalization = Normalization.PAPER_SUM

    def __post_init__(self):
        object.__setattr__(self, "grad_mode", GradMode(self.grad_mode))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if not (self.lambda_label > 0 and self.lambda_pred > 0):
            raise InvalidSpec("lambda_label and lambda_pred must be positive")
        if not self.balance_b >= 0:
            raise InvalidSpec("balance_b must be non-negative")
        if not 0.0 < self.clamp_eps < 0.5:
            raise InvalidSpec("clamp_eps must lie in (0, 0.5)")


@dataclass(frozen=True)
class LossResult:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class WeightMaps:
    """Per-pixel weights for one map.

    Only the side that was asked for is populated; the other weight grid is
    ``None``.
    """

    label_weights: np.ndarray | None = None
    pred_weights: np.ndarray | None = None
    alpha: float | None = None
    i_pos: float | None = None
    i_neg: float | None = None


@dataclass(frozen=True)
class MultiLevelResult:
    levels: list[LossResult]
    total: LossResult


def _inputs(pred, gt):
    pred = as_soft_map(pred, "pred")
    gt = as_binary_map(gt, "gt")
    check_same_shape(pred, gt)
    return pred, gt


def _cross_entropy(pred, gt, eps):
    """Per-pixel cross-entropy and its derivative w.r.t. the unclamped input."""
    p = np.clip(pred, eps, 1.0 - eps)
    ce = np.where(gt, -np.log(p), -np.log1p(-p))
    dce = np.where(gt, -1.0 / p, 1.0 / (1.0 - p))
    dce[(pred < eps) | (pred > 1.0 - eps)] = 0.0
    return ce, dce


def _normalize(value, grad, cfg, n):
    if cfg.normalization is Normalization.PER_PIXEL_MEAN:
        return LossResult(value / n, grad / n)
    return LossResult(value, grad)


def compute_label_weights(gt, cfg: LossConfig = LossConfig()) -> WeightMaps:
    gt = as_binary_map(gt, "gt")
    alpha = float(np.count_nonzero(~gt)) / gt.size
    weights = np.where(gt, alpha, cfg.lambda_label * (1.0 - alpha))
    return WeightMaps(label_weights=weights, alpha=alpha)


def compute_pred_weights(pred, cfg: LossConfig = LossConfig()) -> WeightMaps:
    pred = as_soft_map(pred, "pred")
    n = pred.size
    i_pos = float(np.sum(pred))
    i_neg = n - i_pos
    weights = pred * (i_neg / n) + (1.0 - pred) * (cfg.lambda_pred * i_pos / n)
    return WeightMaps(pred_weights=weights, i_pos=i_pos, i_neg=i_neg)


def label_loss(pred, gt, cfg: LossConfig = LossConfig()) -> LossResult:
    """WBCE. The weights depend on ``gt`` only, so both grad modes coincide."""
    pred, gt = _inputs(pred, gt)
    w = compute_label_weights(gt, cfg).label_weights
    ce, dce = _cross_entropy(pred, gt, cfg.clamp_eps)
    return _normalize(float(np.sum(w * ce)), w * dce, cfg, pred.size)


def pred_loss(pred, gt, cfg: LossConfig = LossConfig()) -> LossResult:
    """Prediction-weighted cross-entropy.

    With ``GradMode.FULL`` the derivative also flows through ``I_P`` and
    ``I_N``.  Differentiating the weight of pixel ``i`` w.r.t. ``p_j`` gives a
    diagonal part ``(I_N - lambda_pred * I_P) / N`` plus a part that is the
    same for every ``j``, so the coupling reduces to one extra scalar added to
    the whole gradient instead of an N x N Jacobian.
    """
    pred, gt = _inputs(pred, gt)
    wm = compute_pred_weights(pred, cfg)
    w = wm.pred_weights
    ce, dce = _cross_entropy(pred, gt, cfg.clamp_eps)
    value = float(np.sum(w * ce))
    grad = w * dce
    if cfg.grad_mode is GradMode.FULL:
        n = pred.size
        lam = cfg.lambda_pred
        grad = grad + ce * ((wm.i_neg - lam * wm.i_pos) / n)
        shared = float(np.sum(ce * (lam * (1.0 - pred) - pred))) / n
        grad = grad + shared
    return _normalize(value, grad, cfg, pred.size)


def swbce_loss(pred, gt, cfg: LossConfig = LossConfig()) -> LossResult:
    lab = label_loss(pred, gt, cfg)
    prd = pred_loss(pred, gt, cfg)
    b = cfg.balance_b
    value = (lab.value + b * prd.value) / (1.0 + b)
    grad = (lab.gradient + b * prd.gradient) / (1.0 + b)
    return LossResult(value, grad)


def multi_level_loss(
    preds: Sequence,
    gt,
    level_weights: Sequence[float],
    cfg: LossConfig = LossConfig(),
    loss_fn=swbce_loss,
) -> MultiLevelResult:
    """Weighted sum of one loss over several side outputs of the same target.

    ``total.gradient`` is stacked per level, shape ``(levels, H, W)``, because
    each level is a different input.
    """
    if len(preds) == 0:
        raise EmptyLevelList("at least one prediction level is required")
    if len(level_weights) != len(preds):
        raise DimensionMismatch(
            f"{len(preds)} prediction levels but {len(level_weights)} level weights"
        )
    if any(w < 0 for w in level_weights):
        raise InvalidSpec("level weights must be non-negative")
    levels = [loss_fn(p, gt, cfg) for p in preds]
    total = 0.0
    for w, res in zip(level_weights, levels):
        total += w * res.value
    grads = np.stack([w * res.gradient for w, res in zip(level_weights, levels)])
    return MultiLevelResult(levels, LossResult(total, grads))


_LOSSES = {"wbce": label_loss, "label": label_loss, "pred": pred_loss, "swbce": swbce_loss}


def get_loss(name: str):
    try:
        return _LOSSES[name.lower()]
    except KeyError:
        raise InvalidSpec(f"unknown loss {name!r}; choose from {sorted(_LOSSES)}") from None
