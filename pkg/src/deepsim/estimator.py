"""Estimator-style front end: fit on (pair, ground-truth) lists, predict
dense disparity maps. Thin wrapper over the training loop and the
multi-resolution matcher, with sklearn get_params/set_params plumbing.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .backbone import MlpConfig, MsAffConfig, MsAffModel
from .matcher import PyramidConfig, SgmParams, run_pyramid
from .training import TrainConfig, default_phases, train


class DeepSimMatcher(BaseEstimator):
    """Hybrid learned/handcrafted stereo matcher.

    fit(X, y) trains the feature extractor and MLP head; X is a list of
    (left, right) image pairs, y the matching list of DisparityGT. predict
    returns one disparity map per pair via the coarse-to-fine pipeline.
    """

    def __init__(self, features=8, mlp_hidden=(64, 64), epochs_per_phase=5,
                 base_lr=0.001, tile=64, seed=0, cost_mode="mlp",
                 global_range=(0, 16), tau=0.5, p1=0.3, p2=2.0, margin=0.3):
        self.features = features
        self.mlp_hidden = mlp_hidden
        self.epochs_per_phase = epochs_per_phase
        self.base_lr = base_lr
        self.tile = tile
        self.seed = seed
        self.cost_mode = cost_mode
        self.global_range = global_range
        self.tau = tau
        self.p1 = p1
        self.p2 = p2
        self.margin = margin

    def _train_config(self):
        return TrainConfig(phases=default_phases(self.epochs_per_phase),
                           base_lr=self.base_lr, tile=self.tile, seed=self.seed,
                           margin=self.margin)

    def fit(self, X, y, holdout=None, log_path=None):
        if len(X) != len(y) or not X:
            raise ValueError("X and y must be equal-length and nonempty")
        data = [(np.asarray(l, dtype=np.float64), np.asarray(r, dtype=np.float64), gt)
                for (l, r), gt in zip(X, y)]
        self.model_ = MsAffModel(MsAffConfig(features=self.features),
                                 MlpConfig(hidden=tuple(self.mlp_hidden)),
                                 seed=self.seed)
        self.log_ = train(self._train_config(), self.model_, data,
                          holdout=holdout, log_path=log_path)
        return self

    def _pyramid_config(self):
        return PyramidConfig(global_range=tuple(self.global_range),
                             cost_mode=self.cost_mode, tau=self.tau)

    def predict(self, X):
        return [self.predict_full(l, r)[0] for l, r in X]

    def predict_full(self, left, right):
        """(disparity, similarity, occlusion) for one pair."""
        model = getattr(self, "model_", None)
        cfg = self._pyramid_config()
        if model is None:
            cfg.cost_mode = "ncc"
        return run_pyramid(np.asarray(left, dtype=np.float64),
                           np.asarray(right, dtype=np.float64),
                           model, cfg, SgmParams(p1=self.p1, p2=self.p2))
