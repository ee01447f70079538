"""Training objectives: hinge triplet loss on cosine similarities, BCE on
MLP scores, and their occlusion-extended variants.

All losses consume a TripletSampleSet and return a differentiable scalar
Tensor. Reduction is 'mean' (per included reference pixel) or 'sum'.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import cosine_map
from .sampling import EmptySampleError, TripletSampleSet
from .tensor import Tensor, concat

LOG_EPS = 1e-7  # clamp for log arguments; the formulas alone allow -inf


@dataclass
class LossParams:
    margin: float = 0.3
    reduction: str = "mean"
    occlusion_term: bool = False

    def __post_init__(self):
        if not (0.0 < self.margin < 2.0):
            raise ValueError(f"margin must be in (0, 2), got {self.margin}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


def _reduce(per_pixel: Tensor, mask: np.ndarray, reduction: str) -> Tensor:
    total = (per_pixel * Tensor(mask.astype(np.float64))).sum()
    if reduction == "mean":
        total = total * (1.0 / float(mask.sum()))
    return total


def mlp_score_map(mlp, ref: Tensor, other: Tensor) -> Tensor:
    """Per-pixel MLP similarity of two (F,H,W) feature maps, as (H,W)."""
    F, H, W = ref.shape
    a = ref.reshape(F, H * W).transpose()
    b = other.reshape(F, H * W).transpose()
    return mlp.mlp_scores(concat([a, b], axis=1)).reshape(H, W)


def triplet_loss(sample_set: TripletSampleSet, params: LossParams) -> Tensor:
    """Hinged cosine triplet loss over the positive sample mask."""
    if not sample_set.y_pos.any():
        raise EmptySampleError("positive sample mask is empty")
    s_pos = cosine_map(sample_set.x_ref, sample_set.x_pos)
    s_neg = cosine_map(sample_set.x_ref, sample_set.x_neg)
    hinge = (s_neg - s_pos + params.margin).maximum(0.0)
    return _reduce(hinge, sample_set.y_pos, params.reduction)


def bce_loss(sample_set: TripletSampleSet, mlp, params: LossParams) -> Tensor:
    """Binary cross-entropy on MLP scores of positive and negative pairs."""
    if not (sample_set.y_pos.any() or sample_set.y_neg.any()):
        raise EmptySampleError("sample masks are empty")
    s_pos = mlp_score_map(mlp, sample_set.x_ref, sample_set.x_pos).clamp(LOG_EPS, 1.0 - LOG_EPS)
    s_neg = mlp_score_map(mlp, sample_set.x_ref, sample_set.x_neg).clamp(LOG_EPS, 1.0 - LOG_EPS)
    one = Tensor(1.0)
    pos_term = (s_pos.log() * Tensor(sample_set.y_pos.astype(np.float64))).sum()
    neg_term = ((one - s_neg).log() * Tensor(sample_set.y_neg.astype(np.float64))).sum()
    total = -(pos_term + neg_term)
    if params.reduction == "mean":
        total = total * (1.0 / float((sample_set.y_pos | sample_set.y_neg).sum()))
    return total


def _require_second_negative(sample_set):
    if sample_set.x_neg2 is None:
        raise ValueError("occlusion-aware loss needs the second negative map (x_neg2)")


def triplet_loss_occ(sample_set: TripletSampleSet, params: LossParams) -> Tensor:
    """Triplet loss plus a hinged push-down of both cosines at occluded pixels."""
    base = triplet_loss(sample_set, params)
    if not sample_set.occ.any():
        return base
    _require_second_negative(sample_set)
    s1 = cosine_map(sample_set.x_ref, sample_set.x_neg)
    s2 = cosine_map(sample_set.x_ref, sample_set.x_neg2)
    occ_term = (s1 + s2).maximum(0.0)
    return base + _reduce(occ_term, sample_set.occ, params.reduction)


def bce_loss_occ(sample_set: TripletSampleSet, mlp, params: LossParams) -> Tensor:
    """BCE loss with both occluded-pixel scores supervised toward zero."""
    base = bce_loss(sample_set, mlp, params)
    if not sample_set.occ.any():
        return base
    _require_second_negative(sample_set)
    one = Tensor(1.0)
    s1 = mlp_score_map(mlp, sample_set.x_ref, sample_set.x_neg).clamp(LOG_EPS, 1.0 - LOG_EPS)
    s2 = mlp_score_map(mlp, sample_set.x_ref, sample_set.x_neg2).clamp(LOG_EPS, 1.0 - LOG_EPS)
    per_pixel = -((one - s1).log() + (one - s2).log())
    return base + _reduce(per_pixel, sample_set.occ, params.reduction)
