import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swbce import _matching_py, kernels
from swbce.errors import DimensionMismatch, InvalidSpec, MissingPair
from swbce.image_io import read_json, write_binary, write_soft
from swbce.metrics import (
    EvalConfig,
    MatchCounts,
    Matching,
    PRCurve,
    aggregate,
    average_precision,
    candidate_pairs,
    correspond,
    evaluate_arrays,
    evaluate_dataset,
    match_pairs,
    pr_at_thresholds,
    scores,
    threshold,
)

import oracles


def sparse_map(rng, shape, max_pos):
    m = np.zeros(shape, dtype=bool)
    k = rng.integers(0, max_pos + 1)
    idx = rng.choice(m.size, size=k, replace=False)
    m.flat[idx] = True
    return m


binary_maps = st.integers(0, 2**32 - 1).map(
    lambda s: sparse_map(np.random.default_rng(s), (9, 9), 14)
)


def test_threshold_examples():
    pred = np.array([[0.8, 0.2], [0.5, 0.49]])
    np.testing.assert_array_equal(threshold(pred, 0.5), [[1, 0], [1, 0]])
    assert threshold(pred, 0.1).all()
    assert not threshold(pred, 0.9).any()


def test_identical_maps_tol_zero():
    m = sparse_map(np.random.default_rng(0), (10, 10), 20)
    assert correspond(m, m, 0.0) == MatchCounts(int(m.sum()), 0, 0)


def test_shifted_line():
    gt = np.zeros((7, 7), bool)
    gt[1:6, 3] = True
    pred = np.roll(gt, 1, axis=1)
    assert oracles.exhaustive_max_matching(pred, gt, 1.0)[0] == 5
    assert oracles.exhaustive_max_matching(pred, gt, 0.5)[0] == 0
    assert correspond(pred, gt, 1.0) == MatchCounts(5, 0, 0)
    assert correspond(pred, gt, 0.5) == MatchCounts(0, 5, 5)


@pytest.mark.parametrize("matching", list(Matching))
def test_two_predictions_compete(matching):
    gt = np.zeros((5, 5), bool)
    gt[2, 2] = True
    pred = np.zeros((5, 5), bool)
    pred[2, 1] = pred[2, 3] = True
    assert oracles.exhaustive_max_matching(pred, gt, 1.0)[0] == 1
    assert correspond(pred, gt, 1.0, matching) == MatchCounts(1, 1, 0)


def test_greedy_can_be_suboptimal():
    # greedy takes the distance-0 pair (1 -> 1) first, stranding prediction 0
    gt = np.zeros((1, 4), bool)
    gt[0, 1] = gt[0, 2] = True
    pred = np.zeros((1, 4), bool)
    pred[0, 0] = pred[0, 1] = True
    assert correspond(pred, gt, 1.0, Matching.GREEDY).tp == 1
    assert correspond(pred, gt, 1.0, Matching.OPTIMAL).tp == 2
    assert oracles.exhaustive_max_matching(pred, gt, 1.0)[0] == 2


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        correspond(np.zeros((2, 2)), np.zeros((2, 3)), 1.0)


def test_candidate_pairs_respect_tolerance():
    rng = np.random.default_rng(1)
    a, b = sparse_map(rng, (12, 12), 20), sparse_map(rng, (12, 12), 20)
    left, right, d2 = candidate_pairs(a, b, 2.0)
    pa, pb = np.argwhere(a), np.argwhere(b)
    expected = {
        (i, j) for i, p in enumerate(pa) for j, q in enumerate(pb) if math.dist(p, q) <= 2.0
    }
    assert set(zip(left.tolist(), right.tolist())) == expected
    assert np.all(d2 == ((pa[left] - pb[right]) ** 2).sum(axis=1))


@settings(max_examples=60, deadline=None)
@given(binary_maps, binary_maps, st.sampled_from([0.0, 1.0, 1.5, 2.0, 3.0]))
def test_matching_count_symmetry(a, b, tol):
    assert correspond(a, b, tol).tp == correspond(b, a, tol).tp


@settings(max_examples=60, deadline=None)
@given(binary_maps, binary_maps)
def test_tp_monotone_in_tolerance(a, b):
    tps = [correspond(a, b, tol).tp for tol in (0, 1, 1.5, 2, 3, 5)]
    assert tps == sorted(tps)


@settings(max_examples=60, deadline=None)
@given(binary_maps, binary_maps, st.sampled_from([1.0, 2.0, 3.0]))
def test_greedy_never_beats_optimal(a, b, tol):
    assert correspond(a, b, tol, Matching.GREEDY).tp <= correspond(a, b, tol).tp


@settings(max_examples=60, deadline=None)
@given(binary_maps, binary_maps, st.sampled_from([0.0, 1.0, 2.0]))
def test_optimal_equals_exhaustive(a, b, tol):
    assert correspond(a, b, tol).tp == oracles.exhaustive_max_matching(a, b, tol)[0]


def test_compiled_and_python_kernels_agree():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = rng.random((20, 20)) < rng.uniform(0.05, 0.6)
        b = rng.random((20, 20)) < 0.2
        left, right, _ = candidate_pairs(a, b, 1.5)
        n_l, n_r = int(a.sum()), int(b.sum())
        indptr = np.zeros(n_l + 1, dtype=np.int64)
        np.cumsum(np.bincount(left, minlength=n_l), out=indptr[1:])
        m1 = kernels.hopcroft_karp(indptr, right, n_r)
        m2 = _matching_py.hopcroft_karp(indptr, right, n_r)
        assert np.count_nonzero(m1 >= 0) == np.count_nonzero(m2 >= 0)
        for m in (m1, m2):
            matched = m[m >= 0]
            assert len(set(matched.tolist())) == len(matched)
        g1 = kernels.greedy_match(left, right, n_l, n_r)
        g2 = _matching_py.greedy_match(left, right, n_l, n_r)
        np.testing.assert_array_equal(g1, g2)


def test_match_pairs_is_maximum_and_minimum_distance():
    rng = np.random.default_rng(3)
    for _ in range(40):
        a = sparse_map(rng, (6, 6), 5)
        b = sparse_map(rng, (6, 6), 5)
        pairs = match_pairs(a, b, 1.5)
        assert len(pairs) == correspond(a, b, 1.5).tp
        assert np.all(np.hypot(pairs[:, 0] - pairs[:, 2], pairs[:, 1] - pairs[:, 3]) <= 1.5)
        pa, pb = [tuple(p) for p in np.argwhere(a)], [tuple(p) for p in np.argwhere(b)]
        size, all_best = oracles.brute_force_matchings(pa, pb, 1.5)
        assert size == len(pairs)
        if size:
            best_cost = min(sum(math.dist(pa[i], pb[j]) for i, j in m) for m in all_best)
            got = float(np.hypot(pairs[:, 0] - pairs[:, 2], pairs[:, 1] - pairs[:, 3]).sum())
            assert got == pytest.approx(best_cost, abs=1e-9)


def test_match_pairs_greedy_count():
    rng = np.random.default_rng(4)
    a, b = sparse_map(rng, (10, 10), 15), sparse_map(rng, (10, 10), 15)
    assert len(match_pairs(a, b, 1.0, Matching.GREEDY)) == correspond(a, b, 1.0, Matching.GREEDY).tp


def test_tolerance_resolution():
    cfg = EvalConfig(tolerance_ratio=0.0075)
    assert cfg.tolerance_for((720, 1280)) == pytest.approx(11.01, abs=0.01)
    assert EvalConfig(tolerance_px=1).tolerance_for((720, 1280)) == 1.0
    assert EvalConfig(tolerance_px=1).tolerance_for((5, 5)) == 1.0
    with pytest.raises(InvalidSpec):
        EvalConfig(thresholds=(0.5, 0.4))
    with pytest.raises(InvalidSpec):
        EvalConfig(tolerance_px=-1)


def test_perfect_soft_prediction_every_threshold():
    gt = sparse_map(np.random.default_rng(5), (12, 12), 20) | np.eye(12, dtype=bool)
    for counts in pr_at_thresholds(gt.astype(float), gt):
        p, r, _ = scores(counts)
        assert p == r == 1.0


def test_threshold_sweep_coherence():
    rng = np.random.default_rng(6)
    pred = rng.random((16, 16))
    gt = sparse_map(rng, (16, 16), 30)
    counts = pr_at_thresholds(pred, gt)
    n_pos = [c.tp + c.fp for c in counts]
    assert n_pos == sorted(n_pos, reverse=True)
    fps = [c.fp for c in counts]
    assert fps == sorted(fps, reverse=True)


def test_scores_and_ap_conventions():
    assert scores(MatchCounts(0, 0, 5)) == (0.0, 0.0, 0.0)
    assert scores(MatchCounts(3, 1, 1))[2] == pytest.approx(0.75)
    single = PRCurve.from_counts([0.5], [MatchCounts(4, 0, 0)])
    assert average_precision(single) == 1.0
    pts = PRCurve.from_counts([0.1, 0.5, 0.9], [MatchCounts(4, 4, 0), MatchCounts(2, 0, 2), MatchCounts(1, 0, 3)])
    # recall 1 @ p .5, recall .5 @ p 1, recall .25 @ p 1 -> carried to recall 0
    assert average_precision(pts) == pytest.approx(0.25 * 1 + 0.25 * 1 + 0.5 * 0.75)


def _fixture_dataset():
    rng = np.random.default_rng(7)
    preds, gts = [], []
    for _ in range(3):
        gt = sparse_map(rng, (7, 7), 9)
        pred = np.clip(np.where(gt, rng.uniform(0.3, 1.0, gt.shape), rng.uniform(0, 0.7, gt.shape)), 0, 1)
        pred = np.round(pred, 3)
        preds.append(pred)
        gts.append(gt)
    return preds, gts


def test_dataset_metrics_match_brute_force():
    preds, gts = _fixture_dataset()
    thresholds = tuple(k / 20 for k in range(1, 20))
    cfg = EvalConfig(thresholds=thresholds)
    report = evaluate_arrays(preds, gts, cfg)
    ods, ois, ap = oracles.brute_force_evaluate(
        [p.tolist() for p in preds], [g.astype(int).tolist() for g in gts], thresholds, 1.0
    )
    assert report.ods == pytest.approx(ods, abs=1e-12)
    assert report.ois == pytest.approx(ois, abs=1e-12)
    assert report.ap == pytest.approx(ap, abs=1e-12)
    assert report.ois >= report.ods


def test_ods_dominates_every_shared_threshold():
    preds, gts = _fixture_dataset()
    report = evaluate_arrays(preds, gts)
    assert all(report.ods >= pt.f_measure for pt in report.curve.points)


def test_ois_below_ods_is_possible_with_summed_counts():
    # image A: best F at a threshold with many false positives; image B large
    # and good at the shared threshold. Summing counts at per-image optima
    # then weights A's poor precision heavily.
    thresholds = (0.25, 0.75)
    a = [MatchCounts(10, 60, 0), MatchCounts(1, 0, 9)]
    b = [MatchCounts(90, 200, 10), MatchCounts(90, 0, 10)]
    cfg = EvalConfig(thresholds=thresholds)
    report = aggregate([a, b], thresholds, ["a", "b"], cfg)
    assert report.ois < report.ods


def test_evaluate_dataset_perfect_and_empty(tmp_path):
    rng = np.random.default_rng(8)
    gt = sparse_map(rng, (16, 16), 30)
    write_binary(gt, tmp_path / "gt" / "x.pgm")
    write_soft(gt.astype(float), tmp_path / "pred" / "x.pgm")
    write_soft(np.zeros(gt.shape), tmp_path / "zero" / "x.pgm")
    r = evaluate_dataset(tmp_path / "pred", tmp_path / "gt")
    assert (r.ods, r.ois, r.ap) == (1.0, 1.0, 1.0)
    z = evaluate_dataset(tmp_path / "zero", tmp_path / "gt")
    assert (z.ods, z.ois, z.ap) == (0.0, 0.0, 0.0)
    r.write(tmp_path / "out")
    js = read_json(tmp_path / "out" / "eval_report.json")
    assert list(js)[:3] == ["ods", "ois", "ap"]
    assert js["metadata"]["thinning"] == "none"
    lines = (tmp_path / "out" / "pr_curve.csv").read_text().splitlines()
    assert lines[0] == "threshold,tp,fp,fn,precision,recall,f"
    assert lines[1].startswith("0.010000,")
    assert len(lines) == 100


def test_missing_pair(tmp_path):
    write_binary(np.zeros((4, 4), bool), tmp_path / "gt" / "a.pgm")
    write_soft(np.zeros((4, 4)), tmp_path / "pred" / "b.pgm")
    with pytest.raises(MissingPair):
        evaluate_dataset(tmp_path / "pred", tmp_path / "gt")


def test_threads_do_not_change_results():
    preds, gts = _fixture_dataset()
    a = evaluate_arrays(preds, gts, threads=1).to_json()
    b = evaluate_arrays(preds, gts, threads=3).to_json()
    assert a == b
