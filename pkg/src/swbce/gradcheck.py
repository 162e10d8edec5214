"""Finite-difference verification of the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import (
    GradMode,
    LossConfig,
    compute_label_weights,
    compute_pred_weights,
    label_loss,
    pred_loss,
    swbce_loss,
)
from .synth import make_rng

CASES = (("wbce", label_loss), ("pred", pred_loss), ("swbce", swbce_loss))


@dataclass(frozen=True)
class CheckRow:
    loss: str
    grad_mode: str
    trials: int
    worst_rel_error: float
    passed: bool


def _frozen_forward(name, pred, gt, cfg):
    """Forward pass with every weight held at its value for ``pred``."""
    wl = compute_label_weights(gt, cfg).label_weights
    wp = compute_pred_weights(pred, cfg).pred_weights
    b = cfg.balance_b

    def f(x):
        ce = np.where(gt, -np.log(x), -np.log1p(-x))
        lab = float(np.sum(wl * ce))
        prd = float(np.sum(wp * ce))
        if name == "wbce":
            return lab
        if name == "pred":
            return prd
        return (lab + b * prd) / (1.0 + b)

    return f


def central_differences(f, x, step):
    x = x.copy()
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = f(x)
        x[idx] = orig - step
        down = f(x)
        x[idx] = orig
        out[idx] = (up - down) / (2.0 * step)
    return out


def relative_error(analytic, numeric, floor=1e-8):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def run(seed=0, trials=20, size=8, tol=1e-4, step=1e-5, base_cfg: LossConfig = LossConfig()) -> list[CheckRow]:
    """Check every loss x grad-mode on ``trials`` random ``size`` x ``size`` maps.

    Predictions are drawn in [0.01, 0.99] so the clamp never engages, and
    each ground truth holds at least one edge and one background pixel.
    """
    rows = []
    for name, loss in CASES:
        for mode in GradMode:
            cfg = LossConfig(**{**base_cfg.__dict__, "grad_mode": mode})
            rng = make_rng(seed, 2)
            worst = 0.0
            for _ in range(trials):
                pred = rng.uniform(0.01, 0.99, size=(size, size))
                gt = rng.random((size, size)) < 0.2
                gt.flat[0], gt.flat[-1] = True, False
                analytic = loss(pred, gt, cfg).gradient
                if mode is GradMode.DETACHED:
                    f = _frozen_forward(name, pred, gt, cfg)
                else:
                    f = lambda x, loss=loss, gt=gt, cfg=cfg: loss(x, gt, cfg).value  # noqa: E731
                worst = max(worst, relative_error(analytic, central_differences(f, pred, step)))
            rows.append(CheckRow(name, mode.value, trials, worst, worst < tol))
    return rows
