"""Strict-tolerance edge evaluation: correspondence, PR sweeps, ODS / OIS / AP.

Predicted and ground-truth edge pixels are matched one-to-one, a pair being
admissible when the Euclidean distance between the pixel centres is at most
the tolerance.  Nothing is thinned or suppressed before matching.

Counts only depend on the size of the matching, so ``correspond`` runs a
maximum-cardinality matching (Hopcroft-Karp, see :mod:`swbce.kernels`).
``match_pairs`` additionally resolves *which* pixels pair up, choosing the
minimum total distance among maximum matchings.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .errors import InvalidSpec, MissingPair
from .image_io import list_pgm_stems, read_binary, read_soft, write_csv, write_json
from .maps import as_binary_map, as_soft_map, check_same_shape

DEFAULT_THRESHOLDS = tuple(k / 100 for k in range(1, 100))

CSV_HEADER = ("threshold", "tp", "fp", "fn", "precision", "recall", "f")


class Matching(str, enum.Enum):
    OPTIMAL = "optimal"
    GREEDY = "greedy"


class MatchCounts(NamedTuple):
    tp: int
    fp: int
    fn_: int

    def __add__(self, other):
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings.

    Exactly one of ``tolerance_px`` / ``tolerance_ratio`` is used; a ratio is
    multiplied by the image diagonal.  The default is the strict 1-pixel
    tolerance.
    """

    tolerance_px: float | None = 1.0
    tolerance_ratio: float | None = None
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    matching: Matching = Matching.OPTIMAL

    def __post_init__(self):
        object.__setattr__(self, "matching", Matching(self.matching))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if self.tolerance_ratio is not None:
            object.__setattr__(self, "tolerance_px", None)
            if not self.tolerance_ratio > 0:
                raise InvalidSpec("tolerance ratio must be positive")
        elif self.tolerance_px is None or not self.tolerance_px >= 0:
            raise InvalidSpec("pixel tolerance must be >= 0")
        ts = self.thresholds
        if not ts or any(not 0 < t < 1 for t in ts):
            raise InvalidSpec("thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidSpec("thresholds must be strictly increasing")

    def tolerance_for(self, shape) -> float:
        if self.tolerance_ratio is not None:
            return self.tolerance_ratio * math.hypot(shape[0], shape[1])
        return float(self.tolerance_px)

    def describe(self) -> dict:
        if self.tolerance_ratio is not None:
            tol = {"mode": "diagonal_ratio", "value": self.tolerance_ratio}
        else:
            tol = {"mode": "pixels", "value": self.tolerance_px}
        return {
            "tolerance": tol,
            "matching": self.matching.value,
            "thresholds": len(self.thresholds),
            "threshold_min": self.thresholds[0],
            "threshold_max": self.thresholds[-1],
            "thinning": "none",
        }


def threshold(pred, t: float) -> np.ndarray:
    return as_soft_map(pred, "pred") >= t


@lru_cache(maxsize=64)
def _offsets(tol: float):
    """Integer displacements within ``tol``, ordered by distance then (dy, dx)."""
    r = int(math.floor(tol))
    out = [
        (dy * dy + dx * dx, dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if math.sqrt(dy * dy + dx * dx) <= tol
    ]
    out.sort()
    return tuple(out)


def candidate_pairs(pred_bin, gt_bin, tol: float):
    """All admissible (pred, gt) index pairs with their squared distances.

    Indices refer to ``np.nonzero`` order of each map.  Pairs come back
    sorted by prediction index, then distance, then gt index.
    """
    pr, pc = np.nonzero(pred_bin)
    gt_index = np.full(gt_bin.shape, -1, dtype=np.int64)
    n_gt = int(np.count_nonzero(gt_bin))
    gt_index[gt_bin] = np.arange(n_gt)
    h, w = gt_bin.shape
    lefts, rights, dists = [], [], []
    if len(pr) and n_gt:
        all_left = np.arange(len(pr))
        for d2, dy, dx in _offsets(float(tol)):
            r = pr + dy
            c = pc + dx
            ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
            idx = gt_index[r[ok], c[ok]]
            hit = idx >= 0
            lefts.append(all_left[ok][hit])
            rights.append(idx[hit])
            dists.append(np.full(int(hit.sum()), d2, dtype=np.int64))
    if not lefts:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    left = np.concatenate(lefts)
    right = np.concatenate(rights)
    dist2 = np.concatenate(dists)
    order = np.lexsort((right, dist2, left))
    return left[order], right[order], dist2[order]


def _run_matching(pred_bin, gt_bin, tol, matching):
    n_pred = int(np.count_nonzero(pred_bin))
    n_gt = int(np.count_nonzero(gt_bin))
    left, right, dist2 = candidate_pairs(pred_bin, gt_bin, tol)
    if matching is Matching.GREEDY:
        order = np.lexsort((right, left, dist2))
        match_left = kernels.greedy_match(left[order], right[order], n_pred, n_gt)
    else:
        indptr = np.zeros(n_pred + 1, dtype=np.int64)
        np.cumsum(np.bincount(left, minlength=n_pred), out=indptr[1:])
        match_left = kernels.hopcroft_karp(indptr, right, n_gt)
    return match_left, n_pred, n_gt


def correspond(pred_bin, gt_bin, tol: float, matching=Matching.OPTIMAL) -> MatchCounts:
    pred_bin = as_binary_map(pred_bin, "pred")
    gt_bin = as_binary_map(gt_bin, "gt")
    check_same_shape(pred_bin, gt_bin)
    if tol < 0:
        raise InvalidSpec("tolerance must be >= 0")
    match_left, n_pred, n_gt = _run_matching(pred_bin, gt_bin, tol, Matching(matching))
    tp = int(np.count_nonzero(match_left >= 0))
    return MatchCounts(tp, n_pred - tp, n_gt - tp)


def match_pairs(pred_bin, gt_bin, tol: float, matching=Matching.OPTIMAL) -> np.ndarray:
    """Matched pixel coordinates as an ``(k, 4)`` array ``(pr, pc, gr, gc)``.

    For ``OPTIMAL`` the result is a maximum matching whose total Euclidean
    distance is minimal.  Each connected component of the admissibility graph
    is solved as a dense assignment where inadmissible cells cost more than
    any admissible matching of that component could.
    """
    pred_bin = as_binary_map(pred_bin, "pred")
    gt_bin = as_binary_map(gt_bin, "gt")
    check_same_shape(pred_bin, gt_bin)
    p_rc = np.argwhere(pred_bin)
    g_rc = np.argwhere(gt_bin)
    matching = Matching(matching)
    if matching is Matching.GREEDY:
        match_left, _, _ = _run_matching(pred_bin, gt_bin, tol, matching)
        li = np.nonzero(match_left >= 0)[0]
        return np.hstack([p_rc[li], g_rc[match_left[li]]])

    left, right, dist2 = candidate_pairs(pred_bin, gt_bin, tol)
    n_pred, n_gt = len(p_rc), len(g_rc)
    if len(left) == 0:
        return np.zeros((0, 4), dtype=np.int64)
    n = n_pred + n_gt
    graph = coo_matrix((np.ones(len(left)), (left, right + n_pred)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    edge_label = labels[left]
    rows = []
    for comp in np.unique(edge_label):
        sel = edge_label == comp
        l_ids = np.unique(left[sel])
        r_ids = np.unique(right[sel])
        big = tol * min(len(l_ids), len(r_ids)) + 1.0
        cost = np.full((len(l_ids), len(r_ids)), big)
        cost[np.searchsorted(l_ids, left[sel]), np.searchsorted(r_ids, right[sel])] = np.sqrt(dist2[sel])
        ri, ci = linear_sum_assignment(cost)
        real = cost[ri, ci] < big
        rows.append(np.column_stack([l_ids[ri[real]], r_ids[ci[real]]]))
    pairs = np.concatenate(rows)
    pairs = pairs[np.argsort(pairs[:, 0], kind="stable")]
    return np.hstack([p_rc[pairs[:, 0]], g_rc[pairs[:, 1]]])


def pr_at_thresholds(pred, gt, cfg: EvalConfig = EvalConfig()) -> list[MatchCounts]:
    pred = as_soft_map(pred, "pred")
    gt = as_binary_map(gt, "gt")
    check_same_shape(pred, gt)
    tol = cfg.tolerance_for(pred.shape)
    out = []
    cache = {}
    for t in cfg.thresholds:
        binary = pred >= t
        # positive sets are nested in t, so equal counts mean equal sets
        key = int(np.count_nonzero(binary))
        if key not in cache:
            match_left, n_pred, n_gt = _run_matching(binary, gt, tol, cfg.matching)
            tp = int(np.count_nonzero(match_left >= 0))
            cache[key] = MatchCounts(tp, n_pred - tp, n_gt - tp)
        out.append(cache[key])
    return out


def scores(counts: MatchCounts) -> tuple[float, float, float]:
    """Precision, recall and F-measure; empty denominators score 0."""
    tp, fp, fn_ = counts
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn_) if tp + fn_ else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    counts: MatchCounts
    precision: float
    recall: float
    f_measure: float


@dataclass(frozen=True)
class PRCurve:
    points: list[PRPoint]
    scope: str = "dataset"

    @classmethod
    def from_counts(cls, thresholds, counts, scope="dataset"):
        pts = [PRPoint(t, c, *scores(c)) for t, c in zip(thresholds, counts)]
        return cls(pts, scope)

    def best(self) -> PRPoint:
        # first (lowest) threshold wins ties
        best = self.points[0]
        for pt in self.points[1:]:
            if pt.f_measure > best.f_measure:
                best = pt
        return best

    def csv_rows(self):
        return [
            (
                f"{pt.threshold:.6f}",
                pt.counts.tp,
                pt.counts.fp,
                pt.counts.fn_,
                f"{pt.precision:.6f}",
                f"{pt.recall:.6f}",
                f"{pt.f_measure:.6f}",
            )
            for pt in self.points
        ]


def average_precision(curve: PRCurve) -> float:
    """Trapezoidal area under precision over recall.

    Points sharing a recall keep their highest precision.  If the lowest
    recall is positive, its precision is carried back to recall 0 so that a
    curve collapsing to a single point still has an area.
    """
    best_p: dict[float, float] = {}
    for pt in curve.points:
        best_p[pt.recall] = max(best_p.get(pt.recall, 0.0), pt.precision)
    recalls = sorted(best_p)
    if recalls[0] > 0:
        best_p[0.0] = best_p[recalls[0]]
        recalls.insert(0, 0.0)
    area = 0.0
    for r0, r1 in zip(recalls, recalls[1:]):
        area += (r1 - r0) * (best_p[r0] + best_p[r1]) / 2
    return area


@dataclass(frozen=True)
class ImageResult:
    image_id: str
    curve: PRCurve
    best: PRPoint


@dataclass
class EvalReport:
    ods: float
    ois: float
    ap: float
    ods_point: PRPoint
    curve: PRCurve
    per_image: list[ImageResult]
    config: EvalConfig
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ods": self.ods,
            "ois": self.ois,
            "ap": self.ap,
            "ods_threshold": self.ods_point.threshold,
            "ods_precision": self.ods_point.precision,
            "ods_recall": self.ods_point.recall,
            "metadata": {**self.config.describe(), **self.metadata},
            "per_image": [
                {
                    "id": img.image_id,
                    "best_threshold": img.best.threshold,
                    "precision": img.best.precision,
                    "recall": img.best.recall,
                    "f": img.best.f_measure,
                    "tp": img.best.counts.tp,
                    "fp": img.best.counts.fp,
                    "fn": img.best.counts.fn_,
                }
                for img in self.per_image
            ],
        }

    def write(self, out_dir) -> None:
        write_json(self.to_json(), f"{out_dir}/eval_report.json")
        write_csv(CSV_HEADER, self.curve.csv_rows(), f"{out_dir}/pr_curve.csv")


def aggregate(per_image_counts, thresholds, ids, cfg: EvalConfig) -> EvalReport:
    images = []
    for image_id, counts in zip(ids, per_image_counts):
        curve = PRCurve.from_counts(thresholds, counts, scope=f"image:{image_id}")
        images.append(ImageResult(image_id, curve, curve.best()))

    zero = MatchCounts(0, 0, 0)
    totals = []
    for k in range(len(thresholds)):
        acc = zero
        for counts in per_image_counts:
            acc = acc + counts[k]
        totals.append(acc)
    curve = PRCurve.from_counts(thresholds, totals)
    ods_point = curve.best()

    ois_counts = zero
    for img in images:
        ois_counts = ois_counts + img.best.counts
    ois = scores(ois_counts)[2]
    return EvalReport(ods_point.f_measure, ois, average_precision(curve), ods_point, curve, images, cfg)


def evaluate_arrays(
    preds: Sequence, gts: Sequence, cfg: EvalConfig = EvalConfig(), ids=None, threads: int = 1
) -> EvalReport:
    if len(preds) != len(gts):
        raise InvalidSpec(f"{len(preds)} predictions but {len(gts)} ground truths")
    if not preds:
        raise InvalidSpec("nothing to evaluate")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(preds))]

    def one(pair):
        return pr_at_thresholds(pair[0], pair[1], cfg)

    pairs = list(zip(preds, gts))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(one, pairs))
    else:
        per_image = [one(p) for p in pairs]
    return aggregate(per_image, cfg.thresholds, ids, cfg)


def evaluate_dataset(pred_dir, gt_dir, cfg: EvalConfig = EvalConfig(), threads: int = 1) -> EvalReport:
    """Evaluate every ``<stem>.pgm`` in ``pred_dir`` against ``gt_dir/<stem>.pgm``."""
    preds = list_pgm_stems(pred_dir)
    gts = list_pgm_stems(gt_dir)
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise MissingPair(f"stems present in only one directory: {', '.join(missing)}")
    stems = sorted(preds)
    report = evaluate_arrays(
        [read_soft(preds[s]) for s in stems],
        [read_binary(gts[s]) for s in stems],
        cfg,
        ids=stems,
        threads=threads,
    )
    report.metadata["images"] = len(stems)
    return report
