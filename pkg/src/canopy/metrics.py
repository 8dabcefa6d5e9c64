"""Matching-based detection metrics.

Predictions and ground truth are matched one-to-one by optimal
assignment over pairs within a distance gate (default 6 m): among all
matchings that use only gated pairs, the result has maximum cardinality
and, among those, minimum total distance.  Forbidden pairs enter the
assignment problem as a large finite cost plus a validity mask rather
than infinity, keeping the solver numerically safe.

A literal variant (min-weight perfect matching first, gate applied as a
post-filter, which can lose cardinality) is available via post_filter=True
for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import PointSet

RMSE_UNDEFINED = math.nan  # sentinel when there are no matches


@dataclass
class MatchResult:
    matches: list  # (pred_index, gt_index, distance) triples
    unmatched_pred: list
    unmatched_gt: list
    max_dist: float

    @property
    def tp(self):
        return len(self.matches)

    @property
    def fp(self):
        return len(self.unmatched_pred)

    @property
    def fn(self):
        return len(self.unmatched_gt)


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_score: float
    rmse: float  # meters; NaN when no matches
    ap: float | None = None  # None when predictions carry no confidences

    def to_dict(self):
        d = {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
            "f_score": self.f_score,
            "rmse": None if math.isnan(self.rmse) else self.rmse,
            "ap": self.ap,
        }
        return d


def _coords(p):
    if isinstance(p, PointSet):
        return p.xy
    return np.asarray(p, dtype=np.float64).reshape(-1, 2)


def match_points(pred, gt, max_dist=6.0, post_filter=False) -> MatchResult:
    """Optimal one-to-one matching of two point sets in a common metric frame.

    Default semantics: maximum number of pairs with distance <= max_dist,
    minimum total distance among such matchings.  post_filter=True instead
    computes the unconstrained min-weight matching and then drops pairs
    beyond the gate.
    """
    p = _coords(pred)
    g = _coords(gt)
    n, m = len(p), len(g)
    if n == 0 or m == 0:
        return MatchResult([], list(range(n)), list(range(m)), max_dist)

    diff = p[:, None, :] - g[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    feasible = dist <= max_dist
    if post_filter:
        cost = dist
    else:
        big = (min(n, m) + 1) * max(max_dist, 1.0) + 1.0
        cost = np.where(feasible, dist, big)
    rows, cols = linear_sum_assignment(cost)

    matches = []
    matched_p, matched_g = set(), set()
    for i, j in zip(rows, cols):
        if feasible[i, j]:
            matches.append((int(i), int(j), float(dist[i, j])))
            matched_p.add(int(i))
            matched_g.add(int(j))
    return MatchResult(
        matches,
        [i for i in range(n) if i not in matched_p],
        [j for j in range(m) if j not in matched_g],
        max_dist,
    )


def prf_from_counts(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def compute_prf(match: MatchResult):
    """(precision, recall, f_score) with zero-denominator conventions:
    each is 0 when its denominator vanishes."""
    return prf_from_counts(match.tp, match.fp, match.fn)


def compute_rmse(match: MatchResult):
    """Root mean squared Euclidean distance over matched pairs; NaN when
    there are none."""
    if not match.matches:
        return RMSE_UNDEFINED
    d2 = [d * d for _, _, d in match.matches]
    return math.sqrt(sum(d2) / len(d2))


def _confidences(pred):
    if isinstance(pred, PointSet):
        if pred.confidence is None:
            raise ValueError("compute_ap requires per-point confidences")
        return pred.xy, np.asarray(pred.confidence, dtype=np.float64)
    xy, conf = pred
    return (np.asarray(xy, dtype=np.float64).reshape(-1, 2),
            np.asarray(conf, dtype=np.float64).reshape(-1))


def compute_ap(pred, gt, max_dist=6.0):
    """Average precision: AP = sum_n (R_n - R_{n-1}) P_n with R_0 = 0,
    sweeping thresholds over the distinct observed confidences in
    descending order and re-matching independently at each one."""
    xy, conf = _confidences(pred)
    g = _coords(gt)
    if len(g) == 0:
        return 0.0
    ap = 0.0
    r_prev = 0.0
    for t in sorted(set(conf.tolist()), reverse=True):
        sel = conf >= t
        match = match_points(xy[sel], g, max_dist)
        precision, recall, _ = compute_prf(match)
        ap += (recall - r_prev) * precision
        r_prev = recall
    return ap


def pooled_ap(scenes, max_dist=6.0):
    """AP with TP/FP/FN pooled across scenes at each confidence threshold.

    scenes: list of ((xy, conf), gt_xy) in a common metric frame.
    """
    all_conf = sorted({c for (_, conf), _ in scenes for c in np.asarray(conf).tolist()},
                      reverse=True)
    total_gt = sum(len(_coords(g)) for _, g in scenes)
    if total_gt == 0:
        return 0.0
    ap = 0.0
    r_prev = 0.0
    for t in all_conf:
        tp = fp = 0
        for (xy, conf), g in scenes:
            conf = np.asarray(conf, dtype=np.float64)
            sel = conf >= t
            match = match_points(np.asarray(xy)[sel], g, max_dist)
            tp += match.tp
            fp += match.fp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / total_gt
        ap += (recall - r_prev) * precision
        r_prev = recall
    return ap


def metrics_report(pairs, max_dist=6.0):
    """Pooled MetricsReport over (pred PointSet | (xy, conf|None), gt) pairs
    in a common metric frame.  AP is included only when every prediction
    set carries confidences."""
    tp = fp = fn = 0
    sq = []
    ap_scenes = []
    have_conf = True
    for pred, gt in pairs:
        if isinstance(pred, PointSet):
            xy, conf = pred.xy, pred.confidence
        else:
            xy, conf = pred
        match = match_points(xy, gt, max_dist)
        tp += match.tp
        fp += match.fp
        fn += match.fn
        sq.extend(d * d for _, _, d in match.matches)
        if conf is None:
            have_conf = False
        else:
            ap_scenes.append(((xy, conf), _coords(gt)))
    precision, recall, f = prf_from_counts(tp, fp, fn)
    rmse = math.sqrt(sum(sq) / len(sq)) if sq else RMSE_UNDEFINED
    ap = pooled_ap(ap_scenes, max_dist) if (have_conf and ap_scenes) else None
    return MetricsReport(tp, fp, fn, precision, recall, f, rmse, ap)
