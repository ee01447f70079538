"""Inference side: NCC similarity, flexible per-pixel-range cost volumes,
semi-global aggregation, winner-take-all extraction and the coarse-to-fine
multi-resolution predictor loop.

Costs are 1 - similarity with all similarities mapped to [0, 1], so one
P1/P2 scale works for NCC, cosine and MLP modes alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .backbone import MsAffModel
from .tensor import Tensor, concat

_VAR_EPS = 1e-12


@dataclass
class CostVolume:
    """Per-pixel disparity base dmin plus a (H,W,D) cost slab (lower = better).

    active marks slots whose target column lies inside the right image;
    inactive slots carry a sentinel cost above every active one. scale is the
    accumulated path count (1 for a raw volume), used to normalize costs back
    to similarity units.
    """

    dmin: np.ndarray
    cost: np.ndarray
    active: np.ndarray = None
    scale: float = 1.0

    def __post_init__(self):
        self.dmin = np.asarray(self.dmin, dtype=np.int64)
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if self.cost.ndim != 3 or self.cost.shape[:2] != self.dmin.shape:
            raise ValueError("cost must be (H,W,D) matching dmin (H,W)")
        if self.active is None:
            self.active = np.ones(self.cost.shape, dtype=bool)

    @property
    def extent(self) -> int:
        return self.cost.shape[2]

    def disparities(self) -> np.ndarray:
        """Absolute disparity of every slot, shape (H,W,D)."""
        return self.dmin[:, :, None] + np.arange(self.extent)[None, None, :]


@dataclass
class SgmParams:
    p1: float = 0.3
    p2: float = 2.0
    paths: int = 8

    def __post_init__(self):
        if not (0.0 <= self.p1 <= self.p2):
            raise ValueError("penalties must satisfy 0 <= P1 <= P2")
        if self.paths not in (4, 8):
            raise ValueError("paths must be 4 or 8")


@dataclass
class PyramidConfig:
    """Multi-resolution matcher settings.

    global_range is the full-resolution disparity search interval at the
    coarsest level (dataset dependent, must be supplied). Learned similarity
    (cosine or MLP) activates at pyramid factors <= learned_from_factor.
    """

    global_range: tuple = (0, 16)
    ncc_window: int = 5
    learned_from_factor: int = 4
    range_halfwidth: int = 4
    cost_mode: str = "cosine"
    coarsest_factor: int = 8
    tau: float = 0.5
    subpixel: bool = False

    def __post_init__(self):
        if self.ncc_window % 2 == 0 or self.ncc_window < 3:
            raise ValueError("ncc_window must be odd and >= 3")
        if self.cost_mode not in ("cosine", "mlp", "ncc"):
            raise ValueError(f"unknown cost_mode {self.cost_mode!r}")
        if self.range_halfwidth < 1:
            raise ValueError("range_halfwidth must be >= 1")
        if self.global_range[0] >= self.global_range[1]:
            raise ValueError("global_range must be a nonempty interval")


# -- similarity primitives ----------------------------------------------------


def ncc(left: np.ndarray, right: np.ndarray, window: int, d: int, at) -> float:
    """Zero-mean NCC of the two windows centred at `at` and `at` shifted by d.

    Borders are replicate-padded; windows with vanishing variance give 0.
    """
    y, x = at
    r = window // 2
    lp = np.pad(left, r, mode="edge")
    rp = np.pad(right, r, mode="edge")
    wl = lp[y:y + window, x:x + window]
    xc = x - d
    xc = min(max(xc, 0), right.shape[1] - 1)
    wr = rp[y:y + window, xc:xc + window]
    wl = wl - wl.mean()
    wr = wr - wr.mean()
    vl = (wl * wl).mean()
    vr = (wr * wr).mean()
    if vl < _VAR_EPS or vr < _VAR_EPS:
        return 0.0
    return float((wl * wr).mean() / np.sqrt(vl * vr))


def ncc_map(left: np.ndarray, right: np.ndarray, window: int, d: int):
    """NCC at every pixel for one integer disparity; returns (map, valid)."""
    H, W = left.shape
    xs = np.arange(W) - d
    valid = (xs >= 0) & (xs <= W - 1)
    r = right[:, np.clip(xs, 0, W - 1)]
    size = window
    ml = uniform_filter(left, size, mode="nearest")
    mr = uniform_filter(r, size, mode="nearest")
    cov = uniform_filter(left * r, size, mode="nearest") - ml * mr
    vl = uniform_filter(left * left, size, mode="nearest") - ml * ml
    vr = uniform_filter(r * r, size, mode="nearest") - mr * mr
    bad = (vl < _VAR_EPS) | (vr < _VAR_EPS)
    denom = np.sqrt(np.maximum(vl, _VAR_EPS) * np.maximum(vr, _VAR_EPS))
    out = np.where(bad, 0.0, np.clip(cov / denom, -1.0, 1.0))
    return out, np.broadcast_to(valid, (H, W))


def _gather_columns(arr: np.ndarray, xs: np.ndarray):
    """arr (...,H,W) sampled at integer columns xs (H,W); returns (vals, valid)."""
    W = arr.shape[-1]
    valid = (xs >= 0) & (xs <= W - 1)
    idx = np.clip(xs, 0, W - 1)
    if arr.ndim == 2:
        return np.take_along_axis(arr, idx, axis=1), valid
    idxb = np.broadcast_to(idx, arr.shape[:-2] + idx.shape)
    return np.take_along_axis(arr, idxb, axis=-1), valid


def _cosine_slab(feat_l, feat_r, dabs):
    """Cosine similarity of feat_l against feat_r shifted by per-pixel dabs."""
    xs = np.arange(feat_l.shape[2])[None, :] - dabs
    fr, valid = _gather_columns(feat_r, xs)
    dot = (feat_l * fr).sum(axis=0)
    denom = np.maximum(np.sqrt((feat_l ** 2).sum(axis=0) * (fr ** 2).sum(axis=0)), _VAR_EPS)
    return dot / denom, valid


def _mlp_slab(feat_l, feat_r, dabs, model: MsAffModel):
    F, H, W = feat_l.shape
    xs = np.arange(W)[None, :] - dabs
    fr, valid = _gather_columns(feat_r, xs)
    pairs = Tensor(np.concatenate([feat_l.reshape(F, -1).T, fr.reshape(F, -1).T], axis=1))
    scores = model.mlp_scores(pairs).data.reshape(H, W)
    return scores, valid


def build_cost_volume(left, right, dmin, extent: int, mode: str = "cosine",
                      model: MsAffModel = None, window: int = 5,
                      sentinel_margin: float = 2.0) -> CostVolume:
    """Fill a flexible-range cost volume from features or images.

    left/right are (F,H,W) feature maps for cosine/mlp mode, (H,W) images
    for ncc mode. dmin is a per-pixel integer base (or scalar), extent the
    uniform slot count. Cost is 1 - similarity with cosine/NCC affinely
    rescaled to [0,1]; out-of-image slots get max-active + sentinel_margin.
    """
    if extent <= 0:
        raise ValueError("extent must be positive")
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    H, W = left.shape[-2:]
    dmin = np.broadcast_to(np.asarray(dmin, dtype=np.int64), (H, W)).copy()
    cost = np.empty((H, W, extent))
    active = np.empty((H, W, extent), dtype=bool)

    if mode == "ncc":
        if left.ndim != 2:
            raise ValueError("ncc mode expects plain (H,W) images")
        lo, hi = int(dmin.min()), int(dmin.max()) + extent - 1
        maps = {}
        for d in range(lo, hi + 1):
            maps[d] = ncc_map(left, right, window, d)
        for k in range(extent):
            dabs = dmin + k
            sim = np.empty((H, W))
            val = np.empty((H, W), dtype=bool)
            for d in np.unique(dabs):
                sel = dabs == d
                m, v = maps[int(d)]
                sim[sel] = m[sel]
                val[sel] = v[sel]
            cost[:, :, k] = 1.0 - (sim + 1.0) / 2.0
            active[:, :, k] = val
    else:
        if left.ndim != 3:
            raise ValueError(f"{mode} mode expects (F,H,W) feature maps")
        if mode == "mlp" and model is None:
            raise ValueError("mlp mode needs a model")
        for k in range(extent):
            dabs = dmin + k
            if mode == "cosine":
                sim, val = _cosine_slab(left, right, dabs)
                cost[:, :, k] = 1.0 - (sim + 1.0) / 2.0
            else:
                sim, val = _mlp_slab(left, right, dabs, model)
                cost[:, :, k] = 1.0 - sim
            active[:, :, k] = val

    if active.any():
        sentinel = cost[active].max() + sentinel_margin
    else:
        sentinel = sentinel_margin
    cost[~active] = sentinel
    return CostVolume(dmin=dmin, cost=cost, active=active)


# -- semi-global aggregation ---------------------------------------------------


def _sgm_step(c_cur, l_prev, dmin_cur, dmin_prev, p1, p2):
    """One recurrence step for N parallel scanlines with range realignment."""
    N, D = c_cur.shape
    m = l_prev.min(axis=1)
    base = (dmin_cur - dmin_prev)[:, None] + np.arange(D)[None, :]

    def gathered(off):
        j = base + off
        ok = (j >= 0) & (j < D)
        vals = np.take_along_axis(l_prev, np.clip(j, 0, D - 1), axis=1)
        return np.where(ok, vals, np.inf)

    best = np.minimum(gathered(0), np.minimum(gathered(-1), gathered(1)) + p1)
    best = np.minimum(best, (m + p2)[:, None])
    # grouping (best - m) first keeps the zero-penalty collapse bit-exact
    return c_cur + (best - m[:, None])


def _sgm_direction(cost, dmin, p1, p2, dy, dx):
    H, W, D = cost.shape
    L = np.zeros_like(cost)
    if dx != 0:
        xs = range(W) if dx > 0 else range(W - 1, -1, -1)
        first = True
        for x in xs:
            if first:
                L[:, x, :] = cost[:, x, :]
                first = False
                continue
            xp = x - dx
            if dy == 0:
                L[:, x, :] = _sgm_step(cost[:, x, :], L[:, xp, :], dmin[:, x], dmin[:, xp],
                                       p1, p2)
            else:
                # diagonal: rows shift by dy between columns
                if dy > 0:
                    L[0, x, :] = cost[0, x, :]
                    L[1:, x, :] = _sgm_step(cost[1:, x, :], L[:-1, xp, :],
                                            dmin[1:, x], dmin[:-1, xp], p1, p2)
                else:
                    L[-1, x, :] = cost[-1, x, :]
                    L[:-1, x, :] = _sgm_step(cost[:-1, x, :], L[1:, xp, :],
                                             dmin[:-1, x], dmin[1:, xp], p1, p2)
    else:
        ys = range(H) if dy > 0 else range(H - 1, -1, -1)
        first = True
        for y in ys:
            if first:
                L[y, :, :] = cost[y, :, :]
                first = False
                continue
            yp = y - dy
            L[y, :, :] = _sgm_step(cost[y, :, :], L[yp, :, :], dmin[y, :], dmin[yp, :],
                                   p1, p2)
    return L


_DIRECTIONS_4 = ((0, 1), (0, -1), (1, 0), (-1, 0))
_DIRECTIONS_8 = _DIRECTIONS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


def sgm_aggregate(cv: CostVolume, params: SgmParams,
                  directions=None) -> CostVolume:
    """Sum the path-wise SGM recurrences over 4 or 8 directions.

    Per-pixel ranges are realigned by absolute disparity during propagation;
    neighbour slots outside the neighbour's range contribute min_k + P2.
    directions overrides the path set (used by the single-path oracle tests).
    """
    if directions is None:
        directions = _DIRECTIONS_8 if params.paths == 8 else _DIRECTIONS_4
    slabs = [_sgm_direction(cv.cost, cv.dmin, params.p1, params.p2, dy, dx)
             for dy, dx in directions]
    # pairwise tree sum so identical path slabs add without extra rounding
    while len(slabs) > 1:
        slabs = [slabs[i] + slabs[i + 1] if i + 1 < len(slabs) else slabs[i]
                 for i in range(0, len(slabs), 2)]
    return CostVolume(dmin=cv.dmin.copy(), cost=slabs[0], active=cv.active.copy(),
                      scale=cv.scale * len(directions))


# -- extraction ---------------------------------------------------------------


def wta(cv: CostVolume, subpixel: bool = False):
    """Per-pixel argmin disparity and its similarity.

    Ties go to the slot of smallest absolute disparity (then lowest slot).
    best_sim = 1 - best cost normalized by the aggregation scale. With
    subpixel=True an equiangular three-point fit refines interior minima.
    """
    H, W, D = cv.cost.shape
    cost = cv.cost
    cmin = cost.min(axis=2, keepdims=True)
    absd = np.abs(cv.disparities())
    k = np.where(cost == cmin, absd, np.iinfo(np.int64).max).argmin(axis=2)
    iy, ix = np.indices((H, W))
    best_cost = cost[iy, ix, k]
    disp = (cv.dmin + k).astype(np.float64)
    if subpixel and D >= 3:
        interior = (k > 0) & (k < D - 1)
        cl = cost[iy, ix, np.clip(k - 1, 0, D - 1)]
        cr = cost[iy, ix, np.clip(k + 1, 0, D - 1)]
        c0 = best_cost
        denom = 2.0 * (np.maximum(cl, cr) - c0)
        ok = interior & (denom > _VAR_EPS)
        disp = disp + np.where(ok, (cl - cr) / np.where(ok, denom, 1.0), 0.0)
    best_sim = 1.0 - best_cost / cv.scale
    return disp, best_sim


def upsample_predictor(disp: np.ndarray, delta: int):
    """Predicted coarse disparities -> per-pixel search ranges one level up.

    Nearest-neighbour 2x upscale, disparities doubled; each pixel searches
    [round(2d) - delta, round(2d) + delta], extent 2*delta + 1.
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    up = np.repeat(np.repeat(disp, 2, axis=0), 2, axis=1) * 2.0
    dmin = np.rint(up).astype(np.int64) - delta
    return dmin, 2 * delta + 1


def threshold_occlusion(sim: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Occlusion mask by hard-thresholding a similarity map."""
    return np.asarray(sim) < tau


# -- multi-resolution loop ------------------------------------------------------


def _downscale2(img: np.ndarray) -> np.ndarray:
    H, W = img.shape
    if H % 2 or W % 2:
        img = np.pad(img, ((0, H % 2), (0, W % 2)), mode="edge")
        H, W = img.shape
    return img.reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))


def _pad_to_multiple(img: np.ndarray, m: int):
    H, W = img.shape
    ph = (-H) % m
    pw = (-W) % m
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    return img, (H, W)


def pyramid_factors(cfg: PyramidConfig):
    """Scale factors from coarsest to finest, e.g. [8, 4, 2, 1]."""
    f = 1
    factors = [1]
    while f < cfg.coarsest_factor:
        f *= 2
        factors.append(f)
    return factors[::-1]


def run_pyramid(left: np.ndarray, right: np.ndarray, model: MsAffModel | None,
                cfg: PyramidConfig, sgm: SgmParams):
    """Coarse-to-fine disparity estimation.

    The coarsest level is searched exhaustively with NCC over the configured
    global range; finer levels search per-pixel ranges around the upscaled
    prediction. Levels at factor <= learned_from_factor use extracted
    features with cfg.cost_mode when a model is given, NCC otherwise. Every
    level is SGM-regularized. Returns (disparity, similarity, occlusion).
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape:
        raise ValueError(f"image sizes differ: {left.shape} vs {right.shape}")
    H0, W0 = left.shape
    gmin, gmax = cfg.global_range
    if gmax - gmin >= W0:
        raise ValueError("global disparity range exceeds image width")

    factors = pyramid_factors(cfg)
    lpad, orig = _pad_to_multiple(left, factors[0])
    rpad, _ = _pad_to_multiple(right, factors[0])
    levels = [(lpad, rpad)]
    for _ in factors[1:]:
        levels.append((_downscale2(levels[-1][0]), _downscale2(levels[-1][1])))
    levels = levels[::-1]  # coarsest first, matching factors

    dmin = None
    extent = None
    disp = sim = None
    for f, (li, ri) in zip(factors, levels):
        if dmin is None:
            lo = int(np.floor(gmin / f))
            hi = int(np.ceil(gmax / f))
            dmin = np.full(li.shape, lo, dtype=np.int64)
            extent = hi - lo + 1
        use_model = model is not None and f <= cfg.learned_from_factor \
            and cfg.cost_mode != "ncc"
        if use_model:
            fl = _extract_padded(model, li)
            fr = _extract_padded(model, ri)
            cv = build_cost_volume(fl, fr, dmin, extent, mode=cfg.cost_mode,
                                   model=model, sentinel_margin=sgm.p2)
        else:
            cv = build_cost_volume(li, ri, dmin, extent, mode="ncc",
                                   window=cfg.ncc_window, sentinel_margin=sgm.p2)
        cv = sgm_aggregate(cv, sgm)
        disp, sim = wta(cv, subpixel=cfg.subpixel and f == 1)
        if f > 1:
            dmin, extent = upsample_predictor(disp, cfg.range_halfwidth)

    disp = disp[:orig[0], :orig[1]]
    sim = sim[:orig[0], :orig[1]]
    return disp, sim, threshold_occlusion(sim, cfg.tau)


def _extract_padded(model: MsAffModel, img: np.ndarray) -> np.ndarray:
    padded, orig = _pad_to_multiple(img, 8)
    feat = model.extract_features(padded).data
    return feat[:, :orig[0], :orig[1]]
