import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swbce.errors import DimensionMismatch, EmptyLevelList, InvalidMap, InvalidSpec
from swbce.losses import (
    GradMode,
    LossConfig,
    Normalization,
    compute_label_weights,
    compute_pred_weights,
    label_loss,
    multi_level_loss,
    pred_loss,
    swbce_loss,
)

import oracles

GT = np.array([[1, 0], [0, 0]])
PRED = np.array([[0.8, 0.2], [0.2, 0.2]])

# frozen from oracles.scalar_* on the fixture above
LABEL_VALUE = 0.35145109331988034
PRED_VALUE = 0.42642732656145477
SWBCE_VALUE = 0.38893920994066755

LOSSES = [label_loss, pred_loss, swbce_loss]


def random_instance(rng, size=8, lo=0.01, hi=0.99):
    pred = rng.uniform(lo, hi, size=(size, size))
    gt = rng.random((size, size)) < 0.2
    gt[0, 0], gt[0, 1] = True, False
    return pred, gt


def test_label_weights_fixture():
    wm = compute_label_weights(GT)
    assert wm.alpha == 0.75
    np.testing.assert_allclose(wm.label_weights, [[0.75, 0.275], [0.275, 0.275]], rtol=1e-15)


def test_pred_weights_fixture():
    wm = compute_pred_weights(PRED)
    assert wm.i_pos == pytest.approx(1.4, abs=1e-15)
    assert wm.i_neg == pytest.approx(2.6, abs=1e-15)
    assert wm.pred_weights[0, 0] == pytest.approx(0.597, abs=1e-15)
    expected, _, _ = oracles.scalar_pred_weights(PRED.tolist())
    np.testing.assert_allclose(wm.pred_weights.ravel(), expected, rtol=1e-14)


def test_fixture_values():
    assert label_loss(PRED, GT).value == pytest.approx(LABEL_VALUE, abs=1e-12)
    assert pred_loss(PRED, GT).value == pytest.approx(PRED_VALUE, abs=1e-12)
    assert swbce_loss(PRED, GT).value == pytest.approx(SWBCE_VALUE, abs=1e-12)


def test_pred_loss_term_breakdown():
    ce = -np.log(0.8)
    assert 0.597 * ce == pytest.approx(0.13322, abs=5e-6)
    assert 0.438 * ce == pytest.approx(0.09774, abs=5e-6)


@pytest.mark.parametrize("gt", [np.zeros((3, 4)), np.ones((3, 4))])
def test_degenerate_ground_truth_gives_zero_label_loss(gt):
    pred = np.random.default_rng(0).uniform(size=gt.shape)
    assert label_loss(pred, gt).value == 0.0
    assert not np.any(label_loss(pred, gt).gradient)


@pytest.mark.parametrize("fill", [0.0, 1.0])
@pytest.mark.parametrize("mode", list(GradMode))
def test_degenerate_prediction_gives_zero_pred_loss(fill, mode):
    gt = np.random.default_rng(1).random((4, 4)) < 0.3
    pred = np.full((4, 4), fill)
    wm = compute_pred_weights(pred)
    assert not np.any(wm.pred_weights)
    assert pred_loss(pred, gt, LossConfig(grad_mode=mode)).value == 0.0


def test_edge_gradient_is_negative():
    res = label_loss(PRED, GT)
    assert res.gradient[0, 0] == pytest.approx(-0.75 / 0.8)
    assert res.gradient[0, 0] < 0


def test_perfect_prediction_limit():
    gt = np.random.default_rng(2).random((6, 6)) < 0.3
    for eps in (1e-3, 1e-5, 1e-7):
        pred = np.where(gt, 1 - eps, eps)
        cfg = LossConfig(clamp_eps=eps)
        bound = gt.size * 1.1 * -np.log1p(-eps)
        assert label_loss(pred, gt, cfg).value <= bound
    assert label_loss(np.where(gt, 1 - 1e-7, 1e-7), gt).value < 1e-4


def test_gradient_zeroed_outside_clamp():
    pred = np.array([[0.0, 1.0], [0.5, 0.5]])
    gt = np.array([[1, 0], [1, 0]])
    res = label_loss(pred, gt)
    assert res.gradient[0, 0] == 0.0 and res.gradient[0, 1] == 0.0
    assert np.isfinite(res.value)


def test_b_zero_is_bit_identical_to_wbce():
    rng = np.random.default_rng(3)
    pred, gt = random_instance(rng)
    a = swbce_loss(pred, gt, LossConfig(balance_b=0.0))
    b = label_loss(pred, gt)
    assert a.value == b.value
    assert np.array_equal(a.gradient, b.gradient)


def test_large_b_approaches_pred_loss():
    rng = np.random.default_rng(4)
    pred, gt = random_instance(rng)
    a = swbce_loss(pred, gt, LossConfig(balance_b=1e9)).value
    b = pred_loss(pred, gt).value
    assert abs(a - b) <= 1e-6 * abs(b)


@pytest.mark.parametrize("loss", LOSSES)
def test_shape_mismatch(loss):
    with pytest.raises(DimensionMismatch):
        loss(np.full((2, 2), 0.5), np.zeros((2, 3)))


def test_invalid_inputs():
    with pytest.raises(InvalidMap):
        label_loss(np.full((2, 2), 1.5), GT)
    with pytest.raises(InvalidMap):
        label_loss(PRED, np.full((2, 2), 0.5))
    with pytest.raises(InvalidSpec):
        LossConfig(clamp_eps=0.5)
    with pytest.raises(InvalidSpec):
        LossConfig(lambda_label=0)


@pytest.mark.parametrize("loss", LOSSES)
@pytest.mark.parametrize("mode", list(GradMode))
def test_gradients_match_finite_differences(loss, mode):
    cfg = LossConfig(grad_mode=mode)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        pred, gt = random_instance(rng)
        analytic = loss(pred, gt, cfg).gradient
        if mode is GradMode.DETACHED:
            frozen_label = compute_label_weights(gt, cfg).label_weights
            frozen_pred = compute_pred_weights(pred, cfg).pred_weights

            def forward(x):
                ce = np.where(gt, -np.log(x), -np.log1p(-x))
                lab = np.sum(frozen_label * ce)
                prd = np.sum(frozen_pred * ce)
                if loss is label_loss:
                    return lab
                if loss is pred_loss:
                    return prd
                return (lab + cfg.balance_b * prd) / (1 + cfg.balance_b)

        else:

            def forward(x):
                return loss(x, gt, cfg).value

        numeric = oracles.central_difference(forward, pred, h=1e-5)
        worst = max(worst, oracles.max_relative_error(analytic, numeric))
    assert worst < 1e-4


def test_full_gradient_4x4_tight():
    rng = np.random.default_rng(6)
    cfg = LossConfig(grad_mode=GradMode.FULL)
    pred, gt = random_instance(rng, size=4, lo=0.05, hi=0.95)
    numeric = oracles.central_difference(lambda x: pred_loss(x, gt, cfg).value, pred)
    assert oracles.max_relative_error(pred_loss(pred, gt, cfg).gradient, numeric) < 1e-5


def test_full_and_detached_values_agree():
    rng = np.random.default_rng(7)
    pred, gt = random_instance(rng)
    a = pred_loss(pred, gt, LossConfig(grad_mode=GradMode.FULL))
    b = pred_loss(pred, gt, LossConfig(grad_mode=GradMode.DETACHED))
    assert a.value == b.value
    assert not np.allclose(a.gradient, b.gradient)


@pytest.mark.parametrize("loss", LOSSES)
def test_per_pixel_mean_is_sum_over_n(loss):
    rng = np.random.default_rng(8)
    pred, gt = random_instance(rng)
    s = loss(pred, gt, LossConfig())
    m = loss(pred, gt, LossConfig(normalization=Normalization.PER_PIXEL_MEAN))
    assert m.value == s.value / gt.size
    assert np.array_equal(m.gradient, s.gradient / gt.size)


# -- weight-structure properties --------------------------------------------


@settings(max_examples=50, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_weight_mirror_symmetry(binary):
    lam = 1.3
    cfg = LossConfig(lambda_pred=lam)
    wm = compute_pred_weights(binary.astype(float), cfg)
    n = binary.size
    expected = np.where(binary, wm.i_neg / n, lam * wm.i_pos / n)
    np.testing.assert_allclose(wm.pred_weights, expected, rtol=0, atol=1e-12)
    # same structure as the label side with lambda_pred in place of lambda_label
    lab = compute_label_weights(binary, LossConfig(lambda_label=lam)).label_weights
    np.testing.assert_allclose(wm.pred_weights, lab, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(0, 1)))
def test_pred_weights_bracketed(pred):
    wm = compute_pred_weights(pred)
    n = pred.size
    assert wm.i_pos + wm.i_neg == pytest.approx(n, abs=1e-12)
    lo = min(wm.i_neg / n, 1.1 * wm.i_pos / n)
    hi = max(wm.i_neg / n, 1.1 * wm.i_pos / n)
    assert np.all(wm.pred_weights >= lo - 1e-12)
    assert np.all(wm.pred_weights <= hi + 1e-12)


def _fp_contributions(gt_density, rng, size=20):
    n = size * size
    gt = np.zeros(n, dtype=bool)
    gt[: int(round(gt_density * n))] = True
    pred = np.where(gt, rng.uniform(0.3, 0.6, n), rng.uniform(0.0, 0.08, n))
    fp = n - 1
    pred[fp] = 0.9
    ce = -np.log1p(-0.9)
    alpha = compute_label_weights(gt.reshape(size, size)).alpha
    wm = compute_pred_weights(pred.reshape(size, size))
    return (
        wm.pred_weights.ravel()[fp] * ce,
        1.1 * (1 - alpha) * ce,
        wm.i_pos / n,
        wm.i_neg / n,
        1.1 * (1 - alpha),
    )


def test_false_positive_penalised_harder_with_sparse_maps():
    rng = np.random.default_rng(9)
    for density in (0.01, 0.05, 0.1, 0.15):
        pred_part, label_part, pos_frac, neg_frac, label_w = _fp_contributions(density, rng)
        assert pos_frac < 0.2
        assert neg_frac > label_w
        assert pred_part > label_part


def test_false_positive_inequality_needs_sparse_ground_truth():
    # dense gt: neg fraction still exceeds lambda*(1-alpha) but the FP pixel's
    # prediction weight mixes in 0.1 * lambda * I_P / N and falls below it
    n = 100
    gt = np.zeros(n, dtype=bool)
    gt[:77] = True
    pred = np.empty(n)
    pred[-1] = 0.9
    pred[:-1] = (0.15 * n - 0.9) / (n - 1)
    wm = compute_pred_weights(pred.reshape(10, 10))
    alpha = compute_label_weights(gt.reshape(10, 10)).alpha
    assert wm.i_neg / n > 1.1 * (1 - alpha)
    assert wm.pred_weights.ravel()[-1] < 1.1 * (1 - alpha)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (4, 5), elements=st.floats(0, 1)),
    arrays(np.bool_, (4, 5)),
    st.floats(0, 5),
)
def test_losses_non_negative(pred, gt, b):
    cfg = LossConfig(balance_b=b)
    for loss in LOSSES:
        assert loss(pred, gt, cfg).value >= 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_instance(rng, size=5)
    perm = rng.permutation(pred.size)
    pp = pred.ravel()[perm].reshape(pred.shape)
    gp = gt.ravel()[perm].reshape(gt.shape)
    for loss in LOSSES:
        assert loss(pp, gp).value == pytest.approx(loss(pred, gt).value, rel=1e-12)


# -- multi-level -------------------------------------------------------------


def test_multi_level_single_level_identity():
    res = multi_level_loss([PRED], GT, [1.0])
    assert res.total.value == swbce_loss(PRED, GT).value
    assert np.array_equal(res.total.gradient[0], swbce_loss(PRED, GT).gradient)


def test_multi_level_identical_levels():
    res = multi_level_loss([PRED, PRED], GT, [0.5, 0.5])
    assert res.total.value == pytest.approx(swbce_loss(PRED, GT).value, rel=1e-15)


def test_multi_level_manual_sum():
    rng = np.random.default_rng(10)
    gt = rng.random((4, 4)) < 0.25
    preds = [rng.uniform(0.01, 0.99, (4, 4)) for _ in range(3)]
    weights = [1.0, 0.7, 0.5]
    expected = sum(
        w * oracles.scalar_swbce(p.tolist(), gt.astype(int).tolist()) for w, p in zip(weights, preds)
    )
    assert multi_level_loss(preds, gt, weights).total.value == pytest.approx(expected, rel=1e-12)


def test_multi_level_errors():
    with pytest.raises(EmptyLevelList):
        multi_level_loss([], GT, [])
    with pytest.raises(DimensionMismatch):
        multi_level_loss([PRED], GT, [1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        multi_level_loss([np.full((3, 3), 0.5)], GT, [1.0])
