import csv

import numpy as np
import pytest

from deepsim.metrics import (
    HIST_BINS,
    MetricsReport,
    ScorePairs,
    disparity_errors,
    histogram_to_csv,
    intersection_area,
    joint_histogram,
    joint_probability,
    roc_auc,
    roc_to_csv,
    score_report,
)
from deepsim.sampling import DisparityGT


def jp_bruteforce(pos, neg):
    wins = 0.0
    for p, n in zip(pos, neg):
        if p > n:
            wins += 1.0
        elif p == n:
            wins += 0.5
    return 100.0 * wins / len(pos)


def auc_bruteforce(pos, neg):
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return 100.0 * wins / (len(pos) * len(neg))


class TestScorePairs:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ScorePairs(pos=[], neg=[])

    def test_paired_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ScorePairs(pos=[0.1, 0.2], neg=[0.3])

    def test_unpaired_lengths_may_differ(self):
        ScorePairs(pos=[0.1, 0.2], neg=[0.3], paired=False)


class TestJointProbability:
    def test_perfect_separation(self):
        sp = ScorePairs(pos=np.full(10, 0.9), neg=np.full(10, 0.1))
        assert joint_probability(sp) == 100.0

    def test_all_ties_give_fifty(self):
        s = np.linspace(0.1, 0.9, 7)
        assert joint_probability(ScorePairs(pos=s, neg=s.copy())) == 50.0

    def test_matches_bruteforce_on_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 1000))
            pos = np.round(rng.random(n), 2)
            neg = np.round(rng.random(n), 2)
            sp = ScorePairs(pos=pos, neg=neg)
            assert joint_probability(sp) == jp_bruteforce(pos, neg)

    def test_same_distribution_monte_carlo(self):
        rng = np.random.default_rng(1)
        n = 100_000
        sp = ScorePairs(pos=rng.random(n), neg=rng.random(n))
        assert abs(joint_probability(sp) - 50.0) <= 1.0

    def test_unpaired_rejected(self):
        sp = ScorePairs(pos=[0.1, 0.9], neg=[0.4], paired=False)
        with pytest.raises(ValueError):
            joint_probability(sp)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        pos, neg = rng.random(200), rng.random(200)
        a = joint_probability(ScorePairs(pos=pos, neg=neg))
        b = joint_probability(ScorePairs(pos=np.exp(pos), neg=np.exp(neg),
                                         value_range=(1.0, np.e)))
        assert a == b

    def test_joint_histogram_counts_and_bins(self):
        sp = ScorePairs(pos=[0.9] * 5, neg=[0.1] * 5)
        h = joint_histogram(sp, bins=16)
        assert h.shape == (16, 16)
        assert h.sum() == 5
        with pytest.raises(ValueError):
            joint_histogram(sp, bins=8)


class TestIntersectionArea:
    def test_identical_multisets_full_overlap(self):
        rng = np.random.default_rng(3)
        s = rng.random(500)
        sp = ScorePairs(pos=s, neg=s.copy())
        assert intersection_area(sp) == pytest.approx(100.0)

    def test_disjoint_supports_zero(self):
        sp = ScorePairs(pos=np.full(50, 0.9), neg=np.full(50, 0.1))
        assert intersection_area(sp) == 0.0

    def test_single_shared_bin_hand_value(self):
        # bin width 1/64; put 20% of pos and 100% of neg in the same bin
        pos = np.concatenate([np.full(2, 0.5 / 64), np.full(8, 0.99)])
        neg = np.full(10, 0.5 / 64)
        sp = ScorePairs(pos=pos, neg=neg)
        assert intersection_area(sp) == pytest.approx(20.0)

    def test_symmetric_in_marginals(self):
        rng = np.random.default_rng(4)
        a, b = rng.random(300), rng.random(300)
        x = intersection_area(ScorePairs(pos=a, neg=b))
        y = intersection_area(ScorePairs(pos=b, neg=a))
        assert x == pytest.approx(y)


class TestRocAuc:
    def test_perfect_separation(self):
        auc, _, _ = roc_auc([0.8, 0.9], [0.1, 0.2])
        assert auc == 100.0

    def test_two_by_two_hand_set(self):
        auc, _, _ = roc_auc([0.8, 0.4], [0.6, 0.2])
        assert auc == pytest.approx(75.0)

    def test_all_equal_scores(self):
        auc, _, _ = roc_auc([0.5, 0.5], [0.5, 0.5, 0.5])
        assert auc == pytest.approx(50.0)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pos = np.round(rng.random(int(rng.integers(1, 60))), 1)
            neg = np.round(rng.random(int(rng.integers(1, 60))), 1)
            auc, _, _ = roc_auc(pos, neg)
            assert auc == pytest.approx(auc_bruteforce(pos, neg), abs=1e-10)

    def test_curve_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(6)
        _, fpr, tpr = roc_auc(rng.random(40) + 0.2, rng.random(40))
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0
        assert (np.diff(fpr) >= 0).all() and (np.diff(tpr) >= 0).all()

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(7)
        pos, neg = rng.random(100), rng.random(80)
        a, _, _ = roc_auc(pos, neg)
        b, _, _ = roc_auc(pos ** 3, neg ** 3)
        assert a == pytest.approx(b)


def _gt(d, valid=None, occluded=None):
    d = np.asarray(d, dtype=np.float64)
    if valid is None:
        valid = np.ones_like(d, dtype=bool)
    return DisparityGT(d=d, valid=valid, occluded=occluded)


class TestDisparityErrors:
    def test_exact_prediction_all_zero(self):
        gt = _gt(np.arange(12.0).reshape(3, 4))
        r = disparity_errors(gt.d.copy(), gt)
        assert r.mu == r.sigma == r.nmad == r.d1 == r.d2 == r.d3 == 0.0
        assert r.n == 12

    def test_nmad_hand_value(self):
        gt = _gt(np.zeros((1, 5)))
        pred = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        r = disparity_errors(pred, gt)
        assert r.nmad == pytest.approx(1.4826, abs=1e-6)

    def test_dn_counting_hand_value(self):
        gt = _gt(np.zeros((1, 4)))
        r = disparity_errors(np.array([[0.0, 0.0, 0.0, 2.5]]), gt)
        assert r.d1 == 25.0 and r.d2 == 25.0 and r.d3 == 0.0

    def test_dn_ordering_random(self):
        rng = np.random.default_rng(8)
        gt = _gt(np.zeros((20, 20)))
        r = disparity_errors(rng.standard_normal((20, 20)) * 2, gt)
        assert r.d1 >= r.d2 >= r.d3

    def test_occluded_pixels_excluded_by_default(self):
        d = np.zeros((1, 4))
        occ = np.array([[True, False, False, False]])
        gt = DisparityGT(d=d, valid=np.ones((1, 4), bool), occluded=occ)
        pred = np.array([[9.0, 0.0, 0.0, 0.0]])
        assert disparity_errors(pred, gt).mu == 0.0
        assert disparity_errors(pred, gt, exclude_occluded=False).mu == pytest.approx(2.25)

    def test_empty_mask_rejected(self):
        gt = DisparityGT(d=np.zeros((1, 2)), valid=np.zeros((1, 2), bool))
        with pytest.raises(ValueError):
            disparity_errors(np.zeros((1, 2)), gt)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            disparity_errors(np.zeros((2, 2)), _gt(np.zeros((2, 3))))

    def test_histogram_total_matches_mask(self):
        rng = np.random.default_rng(9)
        gt = _gt(np.zeros((8, 8)))
        r = disparity_errors(rng.random((8, 8)) * 4, gt)
        assert sum(r.histogram) == 64
        assert len(r.histogram_edges) == len(r.histogram) + 1


class TestReportsAndExport:
    def test_score_report_fields(self):
        rng = np.random.default_rng(10)
        sp = ScorePairs(pos=rng.random(100) * 0.5 + 0.5, neg=rng.random(100) * 0.5)
        r = score_report(sp)
        assert r.jp > 90 and r.auc > 90 and 0 <= r.inter_a <= 100
        assert r.n == 100

    def test_json_roundtrip_deterministic(self):
        import json
        r = MetricsReport(jp=50.0, auc=75.0, n=4)
        a = r.to_json()
        assert json.loads(a)["auc"] == 75.0
        assert a == MetricsReport(jp=50.0, auc=75.0, n=4).to_json()

    def test_csv_exports(self, tmp_path):
        _, fpr, tpr = roc_auc([0.9, 0.7], [0.3, 0.1])
        p = tmp_path / "roc.csv"
        roc_to_csv(p, fpr, tpr)
        with open(p) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["fpr", "tpr"]
        assert len(rows) == len(fpr) + 1

        h = tmp_path / "hist.csv"
        histogram_to_csv(h, [3, 1], [0.0, 0.5, 1.0])
        with open(h) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["bin_lo", "bin_hi", "count"]
        assert rows[1] == ["0.0", "0.5", "3"]
