"""Evaluation metrics for similarity scores and disparity maps.

Score-side metrics: joint probability JP (chance that a matching score beats
its non-matching counterpart), histogram intersection area InterA, and ROC
AUC. Disparity-side metrics: mean/std, NMAD and n-pixel error rates of a
predicted map against ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

HIST_BINS = 64


@dataclass
class ScorePairs:
    """Positive and negative similarity scores over one declared range.

    paired=True means pos[i] and neg[i] belong to the same reference pixel,
    which JP requires; AUC and InterA work either way.
    """

    pos: np.ndarray
    neg: np.ndarray
    paired: bool = True
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64).ravel()
        self.neg = np.asarray(self.neg, dtype=np.float64).ravel()
        if self.pos.size == 0 or self.neg.size == 0:
            raise ValueError("score arrays are empty")
        if self.paired and self.pos.shape != self.neg.shape:
            raise ValueError("paired scores must have equal length")


@dataclass
class MetricsReport:
    """Container for every reported number; unused fields stay None."""

    jp: float = None
    inter_a: float = None
    auc: float = None
    mu: float = None
    sigma: float = None
    nmad: float = None
    d1: float = None
    d2: float = None
    d3: float = None
    n: int = 0
    histogram: list = field(default_factory=list)
    histogram_edges: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def joint_probability(sp: ScorePairs) -> float:
    """JP = 100 * P(pos > neg) over the paired samples; exact ties count half."""
    if not sp.paired:
        raise ValueError("joint probability needs paired scores")
    wins = (sp.pos > sp.neg).sum() + 0.5 * (sp.pos == sp.neg).sum()
    return 100.0 * float(wins) / sp.pos.size


def joint_histogram(sp: ScorePairs, bins: int = HIST_BINS) -> np.ndarray:
    """2-D count histogram (pos on axis 0, neg on axis 1) for export."""
    if not sp.paired:
        raise ValueError("joint histogram needs paired scores")
    if bins < 16:
        raise ValueError("bins must be >= 16")
    h, _, _ = np.histogram2d(sp.pos, sp.neg, bins=bins,
                             range=(sp.value_range, sp.value_range))
    return h


def intersection_area(sp: ScorePairs, bins: int = HIST_BINS) -> float:
    """Overlap (percent) of the two marginal score histograms.

    Each marginal is binned over the declared range and normalized to unit
    mass; the overlap coefficient is the sum of per-bin minima.
    """
    hp, _ = np.histogram(sp.pos, bins=bins, range=sp.value_range)
    hn, _ = np.histogram(sp.neg, bins=bins, range=sp.value_range)
    hp = hp / sp.pos.size
    hn = hn / sp.neg.size
    return 100.0 * float(np.minimum(hp, hn).sum())


def roc_auc(pos, neg):
    """AUC percent via the rank statistic P(pos > neg) + half the ties,
    plus the ROC curve sampled at every distinct score. Returns
    (auc, fpr, tpr)."""
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score sets must be nonempty")
    all_scores = np.concatenate([pos, neg])
    order = np.argsort(all_scores, kind="mergesort")
    ranks = np.empty(all_scores.size)
    sorted_scores = all_scores[order]
    i = 0
    while i < sorted_scores.size:
        j = i
        while j + 1 < sorted_scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    n_p, n_n = pos.size, neg.size
    auc = (ranks[:n_p].sum() - n_p * (n_p + 1) / 2.0) / (n_p * n_n)

    thresholds = np.unique(all_scores)[::-1]
    tpr = np.array([(pos >= t).mean() for t in thresholds])
    fpr = np.array([(neg >= t).mean() for t in thresholds])
    fpr = np.concatenate([[0.0], fpr])
    tpr = np.concatenate([[0.0], tpr])
    return 100.0 * float(auc), fpr, tpr


def score_report(sp: ScorePairs, bins: int = HIST_BINS) -> MetricsReport:
    auc, _, _ = roc_auc(sp.pos, sp.neg)
    return MetricsReport(jp=joint_probability(sp) if sp.paired else None,
                         inter_a=intersection_area(sp, bins), auc=auc,
                         n=int(sp.pos.size))


def disparity_errors(pred: np.ndarray, gt, exclude_occluded: bool = True,
                     hist_max: float = 8.0, bins: int = HIST_BINS) -> MetricsReport:
    """Error statistics of a disparity map on the evaluation mask.

    gt is a DisparityGT (or any object with d/valid/occluded arrays). The
    mask is valid pixels, minus occluded ones when exclude_occluded is set.
    mu = mean |e|, sigma = std of signed e, NMAD = 1.4826 * MAD about the
    median, Dn = 100 * P(|e| > n). The histogram bins |e| over [0, hist_max].
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != gt.d.shape:
        raise ValueError("prediction and ground truth shapes differ")
    mask = gt.valid & ~gt.occluded if exclude_occluded else gt.valid
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    e = (pred - gt.d)[mask]
    ae = np.abs(e)
    med = np.median(e)
    hist, edges = np.histogram(ae, bins=bins, range=(0.0, hist_max))
    return MetricsReport(
        mu=float(ae.mean()),
        sigma=float(e.std()),
        nmad=1.4826 * float(np.median(np.abs(e - med))),
        d1=100.0 * float((ae > 1.0).mean()),
        d2=100.0 * float((ae > 2.0).mean()),
        d3=100.0 * float((ae > 3.0).mean()),
        n=int(e.size),
        histogram=hist.tolist(),
        histogram_edges=edges.tolist(),
    )


def write_csv(path, rows, header):
    """Plain CSV export with a header row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow(list(row))


def roc_to_csv(path, fpr, tpr):
    write_csv(path, zip(fpr, tpr), ("fpr", "tpr"))


def histogram_to_csv(path, hist, edges):
    rows = [(edges[i], edges[i + 1], hist[i]) for i in range(len(hist))]
    write_csv(path, rows, ("bin_lo", "bin_hi", "count"))
