"""Hybrid stereo matching: learned multi-scale features with attention
fusion, epipolar triplet/BCE training, and SGM-regularized coarse-to-fine
disparity inference."""

from .backbone import MlpConfig, MsAffConfig, MsAffModel, cosine_map
from .estimator import DeepSimMatcher
from .losses import LossParams, bce_loss, bce_loss_occ, triplet_loss, triplet_loss_occ
from .matcher import (CostVolume, PyramidConfig, SgmParams, build_cost_volume,
                      ncc, run_pyramid, sgm_aggregate, threshold_occlusion,
                      upsample_predictor, wta)
from .metrics import (MetricsReport, ScorePairs, disparity_errors,
                      intersection_area, joint_probability, roc_auc)
from .sampling import (DisparityGT, EmptySampleError, SampleSpec,
                       TripletSampleSet, build_sample_set, derive_occlusion)
from .synthetic import SyntheticSpec, gen_synthetic
from .tensor import Tensor
from .training import Phase, TrainConfig, TrainingDiverged, default_phases, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "MsAffModel", "MsAffConfig", "MlpConfig", "cosine_map",
    "DisparityGT", "SampleSpec", "TripletSampleSet", "EmptySampleError",
    "build_sample_set", "derive_occlusion", "LossParams", "triplet_loss",
    "bce_loss", "triplet_loss_occ", "bce_loss_occ", "CostVolume", "SgmParams",
    "PyramidConfig", "ncc", "build_cost_volume", "sgm_aggregate", "wta",
    "upsample_predictor", "threshold_occlusion", "run_pyramid", "ScorePairs",
    "MetricsReport", "joint_probability", "intersection_area", "roc_auc",
    "disparity_errors", "SyntheticSpec", "gen_synthetic", "TrainConfig",
    "Phase", "default_phases", "train", "TrainingDiverged", "DeepSimMatcher",
]
