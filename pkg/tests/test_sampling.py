import numpy as np
import pytest
from scipy import stats

from deepsim.sampling import (
    DisparityGT,
    EmptySampleError,
    SampleSpec,
    TripletSampleSet,
    build_sample_set,
    derive_occlusion,
    gen_offsets,
    warp_by_disparity,
)
from deepsim.tensor import Tensor


def _gt(d, valid=None, occluded=None):
    d = np.asarray(d, dtype=np.float64)
    valid = np.ones_like(d, dtype=bool) if valid is None else valid
    return DisparityGT(d=d, valid=valid, occluded=occluded)


def occlusion_oracle(gt):
    """Exhaustive per-row injectivity scan (double loop)."""
    H, W = gt.shape
    out = np.zeros((H, W), dtype=bool)
    for y in range(H):
        for x in range(W):
            if not gt.valid[y, x]:
                continue
            t = round(x - gt.d[y, x])
            if t < 0 or t > W - 1:
                out[y, x] = True
                continue
            for x2 in range(W):
                if x2 == x or not gt.valid[y, x2]:
                    continue
                if round(x2 - gt.d[y, x2]) == t and gt.d[y, x2] > gt.d[y, x]:
                    out[y, x] = True
                    break
    return out


class TestSampleSpec:
    @pytest.mark.parametrize("a,b1,b2", [(2, 1, 4), (1, 1, 4), (0, 4, 2), (-1, 1, 4)])
    def test_interval_ordering_enforced(self, a, b1, b2):
        with pytest.raises(ValueError):
            SampleSpec(alpha=a, beta1=b1, beta2=b2)

    @pytest.mark.parametrize("a,b1,b2", [(0, 1, 4), (1, 2, 8), (1, 2, 6), (0, 1, 5)])
    def test_schedule_phases_accepted(self, a, b1, b2):
        SampleSpec(alpha=a, beta1=b1, beta2=b2)


class TestGenOffsets:
    def test_alpha_zero_pins_positives_to_gt(self):
        gt = _gt(np.zeros((8, 8)))
        pos, _, _ = gen_offsets(SampleSpec(0.0, 1.0, 4.0, seed=1), gt)
        np.testing.assert_array_equal(pos, 0.0)

    @pytest.mark.parametrize("a,b1,b2", [(1, 2, 8), (1, 2, 6), (1, 1.0001, 5), (0, 1, 4)])
    def test_offset_supports(self, a, b1, b2):
        gt = _gt(np.zeros((32, 32)))
        pos, neg, neg2 = gen_offsets(SampleSpec(a, b1, b2, seed=2), gt)
        assert np.abs(pos).max() <= a
        for n in (neg, neg2):
            assert np.abs(n).min() >= b1
            assert np.abs(n).max() <= b2

    def test_support_separation(self):
        spec = SampleSpec(1.0, 2.0, 8.0, seed=3)
        gt = _gt(np.zeros((16, 16)))
        pos, neg, _ = gen_offsets(spec, gt)
        assert np.abs(neg).min() - np.abs(pos).max() >= spec.beta1 - spec.alpha - 1e-12

    def test_negative_magnitude_uniformity_chisquare(self):
        gt = _gt(np.zeros((400, 250)))  # 1e5 draws
        _, neg, _ = gen_offsets(SampleSpec(0.0, 1.0, 4.0, seed=4), gt)
        mags = np.abs(neg).ravel()
        hist, _ = np.histogram(mags, bins=20, range=(1.0, 4.0))
        _, p = stats.chisquare(hist)
        assert p > 0.01

    def test_sign_equiprobable(self):
        gt = _gt(np.zeros((400, 250)))
        _, neg, _ = gen_offsets(SampleSpec(0.0, 1.0, 4.0, seed=5), gt)
        frac_pos = (neg > 0).mean()
        assert abs(frac_pos - 0.5) < 0.01

    def test_deterministic_given_seed(self):
        gt = _gt(np.zeros((10, 10)))
        spec = SampleSpec(1.0, 2.0, 8.0, seed=6)
        a = gen_offsets(spec, gt)
        b = gen_offsets(spec, gt)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_second_negative_independent(self):
        gt = _gt(np.zeros((50, 50)))
        _, neg, neg2 = gen_offsets(SampleSpec(0.0, 1.0, 4.0, seed=7), gt)
        assert not np.array_equal(neg, neg2)


class TestWarpByDisparity:
    def test_identity_warp(self):
        rng = np.random.default_rng(0)
        feat = Tensor(rng.random((3, 4, 8)))
        gt = _gt(np.zeros((4, 8)))
        out, inb = warp_by_disparity(feat, gt, np.zeros((4, 8)))
        np.testing.assert_allclose(out.data, feat.data)
        assert inb.all()

    def test_integer_shift(self):
        rng = np.random.default_rng(1)
        feat = Tensor(rng.random((2, 3, 10)))
        gt = _gt(np.full((3, 10), 3.0))
        out, inb = warp_by_disparity(feat, gt, np.zeros((3, 10)))
        np.testing.assert_allclose(out.data[:, :, 3:], feat.data[:, :, :-3])
        assert not inb[:, :3].any() and inb[:, 3:].all()

    def test_half_pixel_is_neighbor_mean(self):
        rng = np.random.default_rng(2)
        feat = Tensor(rng.random((1, 2, 10)))
        gt = _gt(np.full((2, 10), 0.5))
        out, _ = warp_by_disparity(feat, gt, np.zeros((2, 10)))
        expect = 0.5 * (feat.data[:, :, :-1] + feat.data[:, :, 1:])
        np.testing.assert_allclose(out.data[:, :, 1:], expect)


class TestDeriveOcclusion:
    def test_constant_disparity_no_occlusion_interior(self):
        gt = _gt(np.full((4, 12), 2.0))
        occ = derive_occlusion(gt)
        assert not occ[:, 2:].any()
        assert occ[:, :2].all()  # targets fall off the left edge

    @pytest.mark.parametrize("step", [1, 2, 4])
    def test_step_disparity_band_width(self, step):
        W, c = 24, 12
        d = np.zeros((2, W))
        d[:, c:] = step
        occ = derive_occlusion(_gt(d))
        band = occ[0]
        assert band[c - step:c].all()
        assert not band[:c - step].any()
        assert not band[c:].any()

    def test_monotone_nonincreasing_row_injective(self):
        d = np.repeat(np.linspace(3.0, 0.0, 16)[None, :], 2, axis=0)
        occ = derive_occlusion(_gt(d))
        assert not occ[:, 3:].any()

    def test_matches_bruteforce_oracle_on_random_steps(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            W = int(rng.integers(8, 64))
            d = np.zeros((1, W))
            n_steps = int(rng.integers(1, 4))
            for _ in range(n_steps):
                start = int(rng.integers(0, W))
                d[0, start:] = float(rng.integers(0, 6))
            gt = _gt(d)
            np.testing.assert_array_equal(derive_occlusion(gt), occlusion_oracle(gt))

    def test_empty_valid_rejected(self):
        with pytest.raises(EmptySampleError):
            derive_occlusion(_gt(np.zeros((2, 4)), valid=np.zeros((2, 4), dtype=bool)))


class TestBuildSampleSet:
    @staticmethod
    def _features(rng, F, H, W):
        return Tensor(rng.standard_normal((F, H, W)))

    def test_alpha_zero_integer_gt_positive_is_exact(self):
        rng = np.random.default_rng(9)
        H, W = 4, 16
        feat_l = self._features(rng, 3, H, W)
        d = np.full((H, W), 2.0)
        # right features chosen so that warping by d reproduces the left map
        fr = np.zeros((3, H, W))
        fr[:, :, :-2] = feat_l.data[:, :, 2:]
        gt = DisparityGT(d=d, valid=np.ones((H, W), bool))
        s = build_sample_set(feat_l, Tensor(fr), gt, SampleSpec(0.0, 1.0, 4.0, seed=10))
        from deepsim.backbone import cosine_map
        cos = cosine_map(s.x_ref, s.x_pos).data
        assert np.allclose(cos[s.y_pos], 1.0)

    def test_masks_exclude_occluded(self):
        rng = np.random.default_rng(10)
        H, W = 4, 20
        d = np.zeros((H, W))
        d[:, 10:] = 3.0
        occ = derive_occlusion(_gt(d))
        gt = DisparityGT(d=d, valid=np.ones((H, W), bool), occluded=occ)
        s = build_sample_set(self._features(rng, 2, H, W), self._features(rng, 2, H, W),
                             gt, SampleSpec(0.0, 1.0, 4.0, seed=11))
        assert not (s.y_pos & gt.occluded).any()
        assert not (s.occ & s.y_pos).any()
        assert (s.occ <= gt.occluded).all()

    def test_feature_serves_as_positive_and_negative_in_same_set(self):
        # 1-row example, d == 0, beta1 == beta2 - eps == 1: the negative of
        # pixel x is exactly the positive of pixel x -/+ 1.
        rng = np.random.default_rng(11)
        W = 12
        feat = self._features(rng, 3, 1, W)
        gt = _gt(np.zeros((1, W)))
        s = build_sample_set(feat, feat, gt, SampleSpec(0.0, 1.0 - 1e-9, 1.0, seed=12))
        found = False
        for x in range(1, W - 1):
            for nb in (x - 1, x + 1):
                if np.allclose(s.x_neg.data[:, 0, x], s.x_pos.data[:, 0, nb], atol=1e-6):
                    found = True
        assert found

    def test_empty_valid_mask_rejected(self):
        rng = np.random.default_rng(12)
        gt = DisparityGT(d=np.zeros((2, 8)), valid=np.zeros((2, 8), bool))
        with pytest.raises(EmptySampleError):
            build_sample_set(self._features(rng, 2, 2, 8), self._features(rng, 2, 2, 8),
                             gt, SampleSpec(0.0, 1.0, 4.0))

    def test_determinism(self):
        rng = np.random.default_rng(13)
        feat_l = self._features(rng, 2, 4, 12)
        feat_r = self._features(rng, 2, 4, 12)
        gt = _gt(np.full((4, 12), 1.0))
        spec = SampleSpec(0.5, 1.0, 4.0, seed=14)
        a = build_sample_set(feat_l, feat_r, gt, spec)
        b = build_sample_set(feat_l, feat_r, gt, spec)
        np.testing.assert_array_equal(a.x_neg.data, b.x_neg.data)
        np.testing.assert_array_equal(a.y_pos, b.y_pos)
