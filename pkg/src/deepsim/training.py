"""Training loop: SGD with momentum, group-wise learning rates, loss
alternation and the progressive interval-tightening schedule.

Group-wise rates follow a depth cascade: the similarity head trains at the
base rate and each deeper group at a tenth of the previous one (decoder /10,
attention blocks /100, encoder /1000).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .backbone import MlpConfig, MsAffConfig, MsAffModel, cosine_map
from .losses import LossParams, bce_loss, bce_loss_occ, triplet_loss, triplet_loss_occ
from .metrics import ScorePairs, joint_probability
from .sampling import DisparityGT, EmptySampleError, SampleSpec, build_sample_set

DEFAULT_DIVISORS = {"head": 1.0, "decoder": 10.0, "bottleneck": 100.0, "encoder": 1000.0}


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns NaN/Inf."""


@dataclass
class Phase:
    alpha: float
    beta1: float
    beta2: float
    epochs: int

    def __post_init__(self):
        if not (0.0 <= self.alpha < self.beta1 < self.beta2):
            raise ValueError("phase must satisfy 0 <= alpha < beta1 < beta2")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")


def default_phases(epochs: int = 50):
    """Interval tightening: wide negatives with loose positives first, then
    the tight final configuration (alpha=0, beta1=1, beta2=4)."""
    return [Phase(1.0, 2.0, 8.0, epochs), Phase(1.0, 2.0, 6.0, epochs),
            Phase(0.0, 1.0, 5.0, epochs), Phase(0.0, 1.0, 4.0, epochs)]


@dataclass
class TrainConfig:
    phases: list = field(default_factory=default_phases)
    base_lr: float = 0.001
    lr_divisors: dict = field(default_factory=lambda: dict(DEFAULT_DIVISORS))
    momentum: float = 0.9
    loss_cadence: str = "alternate"  # alternate | triplet | bce
    occlusion_final_phase: bool = True
    tile: int = 64
    seed: int = 0
    margin: float = 0.3

    def __post_init__(self):
        if not self.phases:
            raise ValueError("at least one phase required")
        if self.loss_cadence not in ("alternate", "triplet", "bce"):
            raise ValueError(f"unknown loss cadence {self.loss_cadence!r}")
        if "DEEPSIM_SEED" in os.environ:
            self.seed = int(os.environ["DEEPSIM_SEED"])
        # tightening must be monotone: beta1 and the interval width never grow
        for a, b in zip(self.phases, self.phases[1:]):
            if b.beta1 > a.beta1 or (b.beta2 - b.beta1) > (a.beta2 - a.beta1):
                raise ValueError("phases must tighten monotonically")

    def group_lrs(self) -> dict:
        return {g: self.base_lr / d for g, d in self.lr_divisors.items()}


def config_from_dict(section: dict) -> TrainConfig:
    """TrainConfig from a string-valued config file section."""
    kw = {}
    for key, cast in (("base_lr", float), ("momentum", float), ("tile", int),
                      ("seed", int), ("margin", float), ("loss_cadence", str)):
        if key in section:
            kw[key] = cast(section[key])
    if "epochs_per_phase" in section:
        kw["phases"] = default_phases(int(section["epochs_per_phase"]))
    return TrainConfig(**kw)


class SgdMomentum:
    """Plain SGD with momentum and per-group learning rates."""

    def __init__(self, model: MsAffModel, config: TrainConfig):
        self.model = model
        self.lrs = config.group_lrs()
        self.mu = config.momentum
        self.velocity = {name: np.zeros_like(t.data)
                         for name, _, t in model.named_parameters()}

    def step(self):
        for name, group, t in self.model.named_parameters():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.mu
            v -= self.lrs[group] * t.grad
            t.data = t.data + v
        self.model.zero_grad()


def _crop(arrs, tile, rng):
    H, W = arrs[0].shape[-2:]
    if tile >= H and tile >= W:
        return arrs
    y = int(rng.integers(0, max(H - tile, 0) + 1))
    x = int(rng.integers(0, max(W - tile, 0) + 1))
    return [a[..., y:y + tile, x:x + tile] for a in arrs]


def _crop_gt(gt: DisparityGT, y, x, tile):
    return DisparityGT(d=gt.d[y:y + tile, x:x + tile],
                       valid=gt.valid[y:y + tile, x:x + tile],
                       occluded=gt.occluded[y:y + tile, x:x + tile])


def holdout_jp(model: MsAffModel, pairs, spec: SampleSpec) -> float:
    """JP of cosine scores on held-out pairs under the given sample spec."""
    pos_all, neg_all = [], []
    for left, right, gt in pairs:
        fl = model.extract_features(left)
        fr = model.extract_features(right)
        try:
            s = build_sample_set(fl, fr, gt, spec)
        except EmptySampleError:
            continue
        s_pos = cosine_map(s.x_ref, s.x_pos).data
        s_neg = cosine_map(s.x_ref, s.x_neg).data
        pos_all.append(s_pos[s.y_pos])
        neg_all.append(s_neg[s.y_pos])
    if not pos_all:
        raise EmptySampleError("no usable holdout samples")
    sp = ScorePairs(pos=np.concatenate(pos_all), neg=np.concatenate(neg_all),
                    value_range=(-1.0, 1.0))
    return joint_probability(sp)


def train(cfg: TrainConfig, model: MsAffModel, data, holdout=None, log_path=None):
    """Run all phases over `data` (list of (left, right, DisparityGT)).

    One optimizer step per pair per epoch, random tile crops redrawn every
    epoch. Returns the log rows (epoch, phase, loss_triplet, loss_bce,
    jp_holdout). Raises TrainingDiverged on a non-finite loss.
    """
    if not data:
        raise ValueError("training data is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = SgdMomentum(model, cfg)
    rows = []
    step = 0
    epoch = 0
    hold_spec = SampleSpec(0.0, 1.0, 4.0, seed=12345)
    for pi, phase in enumerate(cfg.phases):
        final = pi == len(cfg.phases) - 1
        use_occ = cfg.occlusion_final_phase and final
        params = LossParams(margin=cfg.margin, occlusion_term=use_occ)
        for _ in range(phase.epochs):
            order = rng.permutation(len(data))
            t_losses, b_losses = [], []
            for idx in order:
                left, right, gt = data[idx]
                H, W = left.shape
                y = int(rng.integers(0, max(H - cfg.tile, 0) + 1))
                x = int(rng.integers(0, max(W - cfg.tile, 0) + 1))
                lt = left[y:y + cfg.tile, x:x + cfg.tile]
                rt = right[y:y + cfg.tile, x:x + cfg.tile]
                gtt = _crop_gt(gt, y, x, cfg.tile)
                spec = SampleSpec(phase.alpha, phase.beta1, phase.beta2,
                                  seed=int(rng.integers(0, 2 ** 31)))
                fl = model.extract_features(lt)
                fr = model.extract_features(rt)
                try:
                    sset = build_sample_set(fl, fr, gtt, spec)
                except EmptySampleError:
                    continue
                if cfg.loss_cadence == "triplet":
                    use_triplet = True
                elif cfg.loss_cadence == "bce":
                    use_triplet = False
                else:
                    use_triplet = step % 2 == 0
                if use_triplet:
                    fn = triplet_loss_occ if use_occ else triplet_loss
                    loss = fn(sset, params)
                    t_losses.append(loss.item())
                else:
                    fn = bce_loss_occ if use_occ else bce_loss
                    loss = fn(sset, model, params)
                    b_losses.append(loss.item())
                if not np.isfinite(loss.item()):
                    raise TrainingDiverged(f"loss became {loss.item()} at step {step}")
                loss.backward()
                opt.step()
                step += 1
            epoch += 1
            jp = holdout_jp(model, holdout, hold_spec) if holdout else ""
            rows.append((epoch, pi,
                         np.mean(t_losses) if t_losses else "",
                         np.mean(b_losses) if b_losses else "",
                         jp))
    if log_path is not None:
        write_log(log_path, cfg, rows)
    return rows


def write_log(path, cfg: TrainConfig, rows):
    """CSV log with the effective group rates in comment lines up top."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in ("head", "decoder", "bottleneck", "encoder"):
            fh.write(f"# lr {g}={cfg.group_lrs()[g]:g}\n")
        fh.write("epoch,phase,loss_triplet,loss_bce,jp_holdout\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
