"""Ensemble sample mining: epipolar offset generation, disparity warping,
geometric occlusion derivation and triplet sample-set assembly.

Disparity convention throughout: x_right = x_left - d.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, warp_columns


class EmptySampleError(ValueError):
    """Raised when a sample set would contain no usable pixel."""


@dataclass
class DisparityGT:
    """Per-pixel ground-truth disparity with validity and occlusion masks."""

    d: np.ndarray
    valid: np.ndarray
    occluded: np.ndarray = None

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.occluded is None:
            self.occluded = np.zeros_like(self.valid)
        self.occluded = np.asarray(self.occluded, dtype=bool)
        if not (self.d.shape == self.valid.shape == self.occluded.shape):
            raise ValueError("d, valid and occluded must share one shape")
        if (self.occluded & ~self.valid).any():
            raise ValueError("occluded mask must be a subset of valid")
        if not np.isfinite(self.d[self.valid]).all():
            raise ValueError("disparities must be finite on valid pixels")

    @property
    def shape(self):
        return self.d.shape


@dataclass
class SampleSpec:
    """Offset-law parameters: positives ~ U[-alpha, alpha], negatives
    ~ +/- U[beta1, beta2] with equiprobable sign."""

    alpha: float
    beta1: float
    beta2: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.alpha < self.beta1 < self.beta2):
            raise ValueError(
                f"sampling intervals must satisfy 0 <= alpha < beta1 < beta2, "
                f"got alpha={self.alpha}, beta1={self.beta1}, beta2={self.beta2}")


@dataclass
class TripletSampleSet:
    x_ref: Tensor
    x_pos: Tensor
    x_neg: Tensor
    y_pos: np.ndarray
    y_neg: np.ndarray
    occ: np.ndarray
    x_neg2: Tensor = None


def gen_offsets(spec: SampleSpec, gt: DisparityGT):
    """Draw per-pixel positive/negative/second-negative epipolar offsets.

    Deterministic for a given spec.seed. Negative offsets are sign-symmetric.
    """
    H, W = gt.shape
    rng = np.random.default_rng(spec.seed)
    pos = rng.uniform(-spec.alpha, spec.alpha, (H, W)) if spec.alpha > 0 else np.zeros((H, W))

    def negative():
        mag = rng.uniform(spec.beta1, spec.beta2, (H, W))
        sign = rng.integers(0, 2, (H, W)) * 2 - 1
        return sign * mag

    return pos, negative(), negative()


def warp_by_disparity(feat_r: Tensor, gt: DisparityGT, off: np.ndarray):
    """Sample the right feature map at x - (d + off) along each row.

    Returns (warped (F,H,W) Tensor, in_bounds (H,W) mask). Out-of-bounds
    pixels are zero-filled and flagged False.
    """
    _, H, W = feat_r.shape
    if gt.shape != (H, W) or off.shape != (H, W):
        raise ValueError("disparity and offset maps must match the feature grid")
    pos = np.arange(W)[None, :] - (gt.d + off)
    return warp_columns(feat_r, pos)


def derive_occlusion(gt: DisparityGT) -> np.ndarray:
    """Occlusion mask by per-row disparity z-buffering.

    A valid pixel is occluded iff its (rounded) target column x - d is also
    claimed by a pixel with strictly larger disparity, or falls outside the
    right tile.
    """
    if not gt.valid.any():
        raise EmptySampleError("validity mask is empty")
    H, W = gt.shape
    target = np.rint(np.arange(W)[None, :] - gt.d).astype(np.int64)
    inb = (target >= 0) & (target <= W - 1) & gt.valid
    bins = np.arange(H)[:, None] * W + np.clip(target, 0, W - 1)
    zbuf = np.full(H * W, -np.inf)
    np.maximum.at(zbuf, bins[inb], gt.d[inb])
    beaten = inb & (gt.d < zbuf[bins])
    return gt.valid & (beaten | ~inb)


def build_sample_set(feat_l: Tensor, feat_r: Tensor, gt: DisparityGT,
                     spec: SampleSpec) -> TripletSampleSet:
    """Assemble reference/positive/negative feature maps and their masks."""
    if feat_l.shape != feat_r.shape:
        raise ValueError("left/right feature maps must match")
    if not gt.valid.any():
        raise EmptySampleError("validity mask is empty")
    pos_off, neg_off, neg2_off = gen_offsets(spec, gt)
    x_pos, inb_p = warp_by_disparity(feat_r, gt, pos_off)
    x_neg, inb_n = warp_by_disparity(feat_r, gt, neg_off)
    x_neg2, inb_n2 = warp_by_disparity(feat_r, gt, neg2_off)
    inb = inb_p & inb_n & inb_n2
    usable = gt.valid & inb
    y = usable & ~gt.occluded
    occ = usable & gt.occluded
    if not (y.any() or occ.any()):
        raise EmptySampleError("no in-bounds valid samples")
    return TripletSampleSet(x_ref=feat_l, x_pos=x_pos, x_neg=x_neg,
                            y_pos=y, y_neg=y.copy(), occ=occ, x_neg2=x_neg2)
