"""Matching, precision/recall/F, RMSE, and AP against exhaustive oracles."""

import math
from functools import lru_cache

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from canopy.data import PointSet
from canopy.metrics import (compute_ap, compute_prf, compute_rmse, match_points,
                            metrics_report, prf_from_counts)


def match_oracle(pred, gt, gate):
    """Exhaustive search over all one-to-one matchings using gated pairs:
    maximum cardinality first, then minimum total distance.  Bitmask DP
    over the ground-truth side enumerates every feasible matching."""
    p = np.asarray(pred, float).reshape(-1, 2)
    g = np.asarray(gt, float).reshape(-1, 2)
    n, m = len(p), len(g)
    if n == 0 or m == 0:
        return 0, 0.0
    dist = cdist(p, g)

    @lru_cache(maxsize=None)
    def best(i, mask):
        if i == n:
            return (0, 0.0)
        top = best(i + 1, mask)  # leave pred i unmatched
        for j in range(m):
            if not mask & (1 << j) and dist[i, j] <= gate:
                c, s = best(i + 1, mask | (1 << j))
                cand = (c + 1, s + dist[i, j])
                if cand[0] > top[0] or (cand[0] == top[0] and cand[1] < top[1]):
                    top = cand
        return top

    return best(0, 0)


class TestMatchPoints:
    def test_identical_sets_fully_matched(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 50, (9, 2))
        res = match_points(pts, pts.copy(), max_dist=6.0)
        assert res.tp == 9 and res.fp == 0 and res.fn == 0
        assert sum(d for _, _, d in res.matches) == pytest.approx(0.0, abs=1e-12)

    def test_empty_pred_all_fn(self):
        res = match_points(np.zeros((0, 2)), np.arange(10).reshape(5, 2), 6.0)
        assert res.tp == 0 and res.fp == 0 and res.fn == 5

    def test_optimal_beats_greedy(self):
        # nearest-first greedy pairs B-X (0.1) then A-Y (2.0) for total 2.1;
        # the optimal pairing A-X + B-Y totals 1.9
        pred = np.array([[0.0, 0.0], [1.1, 0.0]])  # A, B
        gt = np.array([[1.0, 0.0], [2.0, 0.0]])  # X, Y
        res = match_points(pred, gt, max_dist=6.0)
        total = sum(d for _, _, d in res.matches)
        assert res.tp == 2
        assert total == pytest.approx(1.9, abs=1e-12)
        card, best_total = match_oracle(pred, gt, 6.0)
        assert (res.tp, total) == (card, pytest.approx(best_total, abs=1e-9))

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_exhaustive_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(0, 9, size=2)
        pred = rng.uniform(0, 20, (n, 2))
        gt = rng.uniform(0, 20, (m, 2))
        res = match_points(pred, gt, max_dist=6.0)
        card, total = match_oracle(pred, gt, 6.0)
        assert res.tp == card
        assert sum(d for _, _, d in res.matches) == pytest.approx(total, abs=1e-9)
        # structural validity
        assert all(d <= 6.0 for _, _, d in res.matches)
        assert len({i for i, _, _ in res.matches}) == res.tp
        assert len({j for _, j, _ in res.matches}) == res.tp
        assert res.tp + res.fp == n and res.tp + res.fn == m

    def test_swap_symmetry(self):
        rng = np.random.default_rng(42)
        a = rng.uniform(0, 15, (6, 2))
        b = rng.uniform(0, 15, (4, 2))
        ab = match_points(a, b, 6.0)
        ba = match_points(b, a, 6.0)
        assert ab.tp == ba.tp and ab.fp == ba.fn and ab.fn == ba.fp
        assert compute_rmse(ab) == pytest.approx(compute_rmse(ba), abs=1e-12)

    def test_post_filter_variant_can_lose_cardinality(self):
        # distance matrix ~ [[0.2, 0.9], [0.95, 1.5]] with gate 1.0: the
        # unconstrained min-weight matching takes 0.2 + 1.5 and the filter
        # then drops the 1.5 edge, while the gated-optimal keeps two pairs
        pred = np.array([[0.0, 0.0], [1.14778, -0.06577]])
        gt = np.array([[0.2, 0.0], [0.0, 0.9]])
        dist = cdist(pred, gt)
        assert dist[0, 0] < 1.0 and dist[0, 1] < 1.0 and dist[1, 0] < 1.0
        assert dist[1, 1] > 1.0
        assert dist[0, 0] + dist[1, 1] < dist[0, 1] + dist[1, 0]
        gated = match_points(pred, gt, max_dist=1.0)
        literal = match_points(pred, gt, max_dist=1.0, post_filter=True)
        assert gated.tp == 2
        assert literal.tp == 1


class TestPrf:
    def test_hand_table(self):
        assert prf_from_counts(3, 1, 1) == (0.75, 0.75, pytest.approx(0.75))

    def test_equal_pr_implies_f_equal(self):
        for tp, fp, fn in [(5, 2, 2), (1, 3, 3), (10, 0, 0)]:
            p, r, f = prf_from_counts(tp, fp, fn)
            assert p == r and f == pytest.approx(p)

    def test_empty_everything_is_zero_by_convention(self):
        res = match_points(np.zeros((0, 2)), np.zeros((0, 2)), 6.0)
        assert compute_prf(res) == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("tp,fp,fn", [(0, 5, 0), (0, 0, 5), (7, 3, 2), (1, 1, 1)])
    def test_reproduces_count_tables(self, tp, fp, fn):
        p, r, f = prf_from_counts(tp, fp, fn)
        assert p == (tp / (tp + fp) if tp + fp else 0.0)
        assert r == (tp / (tp + fn) if tp + fn else 0.0)
        expect_f = 2 * p * r / (p + r) if p + r else 0.0
        assert f == pytest.approx(expect_f)


class TestRmse:
    def test_exact_matches_zero(self):
        pts = np.random.default_rng(1).uniform(0, 9, (4, 2))
        assert compute_rmse(match_points(pts, pts.copy(), 6.0)) == 0.0

    def test_single_match_at_two_meters(self):
        res = match_points(np.array([[0.0, 0.0]]), np.array([[2.0, 0.0]]), 6.0)
        assert compute_rmse(res) == pytest.approx(2.0, abs=1e-12)

    def test_three_four_gives_sqrt_12_5(self):
        pred = np.array([[0.0, 0.0], [100.0, 0.0]])
        gt = np.array([[3.0, 0.0], [100.0, 4.0]])
        res = match_points(pred, gt, 6.0)
        assert compute_rmse(res) == pytest.approx(math.sqrt(12.5), abs=1e-12)

    def test_no_matches_is_nan_sentinel(self):
        res = match_points(np.array([[0.0, 0.0]]), np.array([[99.0, 99.0]]), 6.0)
        assert math.isnan(compute_rmse(res))


def ap_oracle(xy, conf, gt, gate):
    """Threshold sweep recomputed from scratch with the exhaustive matcher."""
    gt = np.asarray(gt, float).reshape(-1, 2)
    if len(gt) == 0:
        return 0.0
    conf = np.asarray(conf, float)
    ap = 0.0
    r_prev = 0.0
    for t in sorted(set(conf.tolist()), reverse=True):
        sel = conf >= t
        tp, _ = match_oracle(np.asarray(xy)[sel], gt, gate)
        npred = int(sel.sum())
        precision = tp / npred if npred else 0.0
        recall = tp / len(gt)
        ap += (recall - r_prev) * precision
        r_prev = recall
    return ap


class TestAp:
    def test_single_coincident_prediction(self):
        ps = PointSet(np.array([[5.0, 5.0]]), "pixel", confidence=[0.8])
        assert compute_ap(ps, np.array([[5.0, 5.0]]), 6.0) == 1.0

    def test_all_misses_zero(self):
        ps = PointSet(np.array([[0.0, 0.0], [1.0, 1.0]]), "pixel", confidence=[0.9, 0.8])
        assert compute_ap(ps, np.array([[50.0, 50.0]]), 6.0) == 0.0

    def test_hand_executed_sweep(self):
        # hits at 0.9 and 0.3, a miss at 0.5, two ground-truth trees:
        # PR points (1, .5), (.5, .5), (2/3, 1) -> AP = .5 + .5*(2/3)
        gt = np.array([[0.0, 0.0], [20.0, 0.0]])
        ps = PointSet(np.array([[0.0, 1.0], [100.0, 100.0], [20.0, 1.0]]),
                      "pixel", confidence=[0.9, 0.5, 0.3])
        assert compute_ap(ps, gt, 6.0) == pytest.approx(0.5 + 0.5 * (2 / 3), abs=1e-9)

    def test_empty_gt_defined_zero(self):
        ps = PointSet(np.array([[0.0, 0.0]]), "pixel", confidence=[0.5])
        assert compute_ap(ps, np.zeros((0, 2)), 6.0) == 0.0

    def test_requires_confidences(self):
        ps = PointSet(np.array([[0.0, 0.0]]), "pixel")
        with pytest.raises(ValueError, match="confidence"):
            compute_ap(ps, np.array([[0.0, 0.0]]), 6.0)

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_independent_sweep(self, seed):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(1, 8, size=2)
        xy = rng.uniform(0, 25, (n, 2))
        conf = np.round(rng.uniform(size=n), 2)  # duplicates likely
        gt = rng.uniform(0, 25, (m, 2))
        got = compute_ap(PointSet(xy, "pixel", confidence=conf), gt, 6.0)
        assert got == pytest.approx(ap_oracle(xy, conf, gt, 6.0), abs=1e-9)

    def test_ap_within_unit_interval(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            n, m = rng.integers(1, 10, size=2)
            xy = rng.uniform(0, 30, (n, 2))
            conf = rng.uniform(size=n)
            gt = rng.uniform(0, 30, (m, 2))
            ap = compute_ap(PointSet(xy, "pixel", confidence=conf), gt, 6.0)
            assert 0.0 <= ap <= 1.0

    def test_trailing_zero_conf_miss_preserves_earlier_points(self):
        gt = np.array([[0.0, 0.0]])
        base = PointSet(np.array([[0.0, 0.5]]), "pixel", confidence=[0.9])
        extended = PointSet(np.array([[0.0, 0.5], [70.0, 70.0]]), "pixel",
                            confidence=[0.9, 0.0])
        a = compute_ap(base, gt, 6.0)
        b = compute_ap(extended, gt, 6.0)
        assert a == 1.0 and b == 1.0  # recall saturates before the junk point


class TestReport:
    def test_pooled_report(self):
        gt1 = np.array([[0.0, 0.0], [10.0, 0.0]])
        pred1 = PointSet(np.array([[0.0, 1.0], [50.0, 50.0]]), "pixel",
                         confidence=[0.9, 0.2])
        gt2 = np.array([[5.0, 5.0]])
        pred2 = PointSet(np.array([[5.0, 6.0]]), "pixel", confidence=[0.7])
        rep = metrics_report([(pred1, gt1), (pred2, gt2)], max_dist=6.0)
        assert (rep.tp, rep.fp, rep.fn) == (2, 1, 1)
        assert rep.precision == pytest.approx(2 / 3)
        assert rep.recall == pytest.approx(2 / 3)
        assert rep.rmse == pytest.approx(1.0)
        assert rep.ap is not None and 0.0 <= rep.ap <= 1.0

    def test_report_without_confidences_has_no_ap(self):
        gt = np.array([[0.0, 0.0]])
        pred = PointSet(np.array([[0.0, 1.0]]), "pixel")
        rep = metrics_report([(pred, gt)], max_dist=6.0)
        assert rep.ap is None and rep.tp == 1
