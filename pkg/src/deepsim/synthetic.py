"""Synthetic random-dot stereogram generation with exact ground truth.

The right image is built by forward-warping the left texture under the
disparity map (x_right = x_left - d) with z-buffer visibility; dis-occluded
right-image pixels get fresh texture, and Gaussian noise is added last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import DisparityGT, derive_occlusion


@dataclass
class SyntheticSpec:
    size: int = 64
    disparity_model: str = "constant"  # constant | plane | blocks
    max_disparity: float = 8.0
    texture_density: float = 0.5
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.disparity_model not in ("constant", "plane", "blocks"):
            raise ValueError(f"unknown disparity model {self.disparity_model!r}")
        if not (0.0 < self.texture_density <= 1.0):
            raise ValueError("texture_density must be in (0, 1]")
        if abs(self.max_disparity) >= self.size / 4:
            raise ValueError("max |disparity| must stay below size/4")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def _disparity_map(spec: SyntheticSpec, rng) -> np.ndarray:
    n = spec.size
    if spec.disparity_model == "constant":
        return np.full((n, n), float(spec.max_disparity))
    if spec.disparity_model == "plane":
        # tilted plane from 0 at the left edge to max at the right edge
        ramp = np.linspace(0.0, spec.max_disparity, n)
        return np.tile(ramp, (n, 1))
    # blocks: piecewise-constant integer steps
    d = np.zeros((n, n))
    n_blocks = int(rng.integers(2, 5))
    for _ in range(n_blocks):
        h = int(rng.integers(n // 8, n // 2))
        w = int(rng.integers(n // 8, n // 2))
        y = int(rng.integers(0, n - h))
        x = int(rng.integers(0, n - w))
        d[y:y + h, x:x + w] = float(rng.integers(1, int(spec.max_disparity) + 1))
    return d


def _random_dots(rng, shape, density):
    img = rng.random(shape)
    if density < 1.0:
        # sparse bright dots on a dark background
        img = np.where(rng.random(shape) < density, img, img * 0.1)
    return img


def gen_synthetic(spec: SyntheticSpec):
    """Returns (left, right, DisparityGT) for the given spec; deterministic."""
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    d = _disparity_map(spec, rng)
    left = _random_dots(rng, (n, n), spec.texture_density)

    # forward warp with z-buffer: each left pixel paints right[x - d],
    # larger disparity (closer surface) wins
    right = _random_dots(rng, (n, n), spec.texture_density)  # dis-occlusion fill
    xs = np.arange(n)[None, :]
    target = np.rint(xs - d).astype(np.int64)
    inb = (target >= 0) & (target <= n - 1)
    zbuf = np.full((n, n), -np.inf)
    for y in range(n):
        cols = np.where(inb[y])[0]
        for x in cols:
            t = target[y, x]
            if d[y, x] > zbuf[y, t]:
                zbuf[y, t] = d[y, x]
                right[y, t] = left[y, x]

    if spec.noise_sigma > 0:
        left = left + rng.normal(0.0, spec.noise_sigma, left.shape)
        right = right + rng.normal(0.0, spec.noise_sigma, right.shape)

    gt = DisparityGT(d=d, valid=np.ones((n, n), dtype=bool))
    gt = DisparityGT(d=d, valid=gt.valid, occluded=derive_occlusion(gt))
    return left, right, gt


def spec_from_dict(cfg: dict) -> SyntheticSpec:
    """Build a SyntheticSpec from a string-valued config section."""
    kw = {}
    for key, cast in (("size", int), ("disparity_model", str),
                      ("max_disparity", float), ("texture_density", float),
                      ("noise_sigma", float), ("seed", int)):
        if key in cfg:
            kw[key] = cast(cfg[key])
    return SyntheticSpec(**kw)
