"""Multi-scale attentional feature extractor and MLP decision head.

The extractor turns a grayscale tile into an F-channel feature map: a
3-conv stem, four per-scale residual stacks over a 2x pooling pyramid,
three stacked attentional fusion blocks that merge scales coarse-to-fine,
and a final conv stack with a linear last layer (features must be signed
for cosine similarity). The MLP scores a concatenated feature pair in
(0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConvParams,
    ShapeError,
    Tensor,
    concat,
    global_avg_pool,
    linear,
    residual_block,
    resample,
)

PARAM_GROUPS = ("encoder", "bottleneck", "decoder", "head")


@dataclass
class MsAffConfig:
    features: int = 32
    cam_ratio: int = 4
    scales: int = 4
    blocks_per_scale: int = 3

    def __post_init__(self):
        if self.features < 2:
            raise ValueError("features must be >= 2")
        if self.features % self.cam_ratio != 0:
            raise ValueError("features must be divisible by cam_ratio")
        if self.scales != 4 or self.blocks_per_scale != 3:
            raise ValueError("the extractor is fixed at 4 scales with 3 blocks each")


@dataclass
class MlpConfig:
    hidden: tuple = (256, 256, 256)


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MsAffModel:
    """Feature extractor + MLP with named, group-tagged parameters."""

    def __init__(self, config: MsAffConfig | None = None,
                 mlp: MlpConfig | None = None, seed: int = 0):
        self.config = config or MsAffConfig()
        self.mlp_config = mlp or MlpConfig()
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}
        self._init_params(np.random.default_rng(seed))

    # -- parameter bookkeeping ----------------------------------------------

    def _register(self, name: str, group: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if group not in PARAM_GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        self._groups[name] = group
        return t

    def _conv(self, rng, name, group, cin, cout, ksize=3, padding=None):
        pad = (ksize // 2) if padding is None else padding
        fan_in = cin * ksize * ksize
        k = self._register(f"{name}.kernel", group,
                           _kaiming_uniform(rng, (cout, cin, ksize, ksize), fan_in))
        b = self._register(f"{name}.bias", group, np.zeros(cout))
        return ConvParams(k, b, stride=1, padding=pad)

    def _init_params(self, rng):
        F = self.config.features
        r = self.config.cam_ratio
        self.conv0 = [self._conv(rng, f"conv0.{i}", "encoder", 1 if i == 0 else F, F)
                      for i in range(3)]
        self.scale_stacks = []
        for s in range(1, 5):
            blocks = []
            for b in range(3):
                blocks.append([self._conv(rng, f"conv{s}.block{b}.{c}", "encoder", F, F)
                               for c in range(3)])
            self.scale_stacks.append(blocks)
        self.maff = []
        for k in range(1, 4):
            cam = {
                "local0": self._conv(rng, f"maff{k}.local0", "bottleneck", F, F // r, ksize=1),
                "local1": self._conv(rng, f"maff{k}.local1", "bottleneck", F // r, F, ksize=1),
                "global0": self._conv(rng, f"maff{k}.global0", "bottleneck", F, F // r, ksize=1),
                "global1": self._conv(rng, f"maff{k}.global1", "bottleneck", F // r, F, ksize=1),
            }
            self.maff.append(cam)
        self.last_conv = [self._conv(rng, f"last_conv.{i}", "decoder", F, F)
                          for i in range(3)]
        widths = (2 * F,) + tuple(self.mlp_config.hidden) + (1,)
        self.mlp_layers = []
        for i, (win, wout) in enumerate(zip(widths[:-1], widths[1:])):
            w = self._register(f"mlp.{i}.weight", "head",
                               _kaiming_uniform(rng, (win, wout), win))
            b = self._register(f"mlp.{i}.bias", "head", np.zeros(wout))
            self.mlp_layers.append((w, b))

    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        """Yields (name, group, tensor) in registration order."""
        for name, t in self._params.items():
            yield name, self._groups[name], t

    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    # -- forward ---------------------------------------------------------------

    def ms_cam(self, x: Tensor, k: int) -> Tensor:
        """Channel attention map in (0,1)^(C,H,W) for fusion block k (0-based)."""
        if x.shape[0] != self.config.features:
            raise ShapeError(f"ms_cam expects {self.config.features} channels, got {x.shape[0]}")
        cam = self.maff[k]
        local = cam["local1"].apply(cam["local0"].apply(x).relu())
        g = global_avg_pool(x)
        glob = cam["global1"].apply(cam["global0"].apply(g).relu())
        return (local + glob).sigmoid()

    def m_aff_fuse(self, local_feat: Tensor, global_feat: Tensor, k: int) -> Tensor:
        """Attention-weighted convex blend of a local and an up-scaled global map."""
        if local_feat.shape != global_feat.shape:
            raise ShapeError(
                f"fusion operands differ: {local_feat.shape} vs {global_feat.shape}")
        m = self.ms_cam(local_feat + global_feat, k)
        one = Tensor(1.0)
        return m * local_feat + (one - m) * global_feat

    def extract_features(self, image) -> Tensor:
        """Grayscale (1,H,W) tile -> (F,H,W) feature map; H, W divisible by 8."""
        x = image if isinstance(image, Tensor) else Tensor(image)
        if x.data.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.shape[0] != 1:
            raise ShapeError(f"expected a single-channel image, got {x.shape[0]} channels")
        _, H, W = x.shape
        if H % 8 or W % 8:
            raise ShapeError(f"spatial dims must be divisible by 8, got {H}x{W}")

        for p in self.conv0:
            x = p.apply(x).relu()
        pyramid = [x]
        for _ in range(3):
            pyramid.append(resample(pyramid[-1], "down2"))
        outs = []
        for lvl, blocks in zip(pyramid, self.scale_stacks):
            h = lvl
            for blk in blocks:
                h = residual_block(h, blk)
            outs.append(h)
        fused = outs[3]
        for k, lvl in enumerate((2, 1, 0)):
            fused = self.m_aff_fuse(outs[lvl], resample(fused, "up2"), k)
        h = fused
        h = self.last_conv[0].apply(h).relu()
        h = self.last_conv[1].apply(h).relu()
        return self.last_conv[2].apply(h)

    def mlp_scores(self, pairs: Tensor) -> Tensor:
        """(N, 2F) concatenated feature pairs -> (N,) similarity scores in (0,1)."""
        h = pairs
        n = len(self.mlp_layers)
        for i, (w, b) in enumerate(self.mlp_layers):
            h = linear(h, w, b)
            if i < n - 1:
                h = h.relu()
        return h.sigmoid().reshape(-1)

    def mlp_similarity(self, f_left, f_right) -> Tensor:
        """Similarity score for one feature pair (two F-vectors)."""
        fl = f_left if isinstance(f_left, Tensor) else Tensor(f_left)
        fr = f_right if isinstance(f_right, Tensor) else Tensor(f_right)
        F = self.config.features
        if fl.shape != (F,) or fr.shape != (F,):
            raise ShapeError(f"expected two length-{F} vectors, got {fl.shape} and {fr.shape}")
        return self.mlp_scores(concat([fl, fr]).reshape(1, 2 * F))


def cosine_map(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-pixel cosine similarity of two (F,H,W) feature maps, in [-1, 1].

    Pixels where either feature norm vanishes yield 0 (eps-guarded).
    """
    if a.shape != b.shape:
        raise ShapeError(f"cosine_map shapes differ: {a.shape} vs {b.shape}")
    dot = (a * b).sum(axis=0)
    na = (a * a).sum(axis=0).sqrt()
    nb = (b * b).sum(axis=0).sqrt()
    return dot / (na * nb).maximum(eps)


def unet32_reference_param_count(in_channels: int = 1, out_features: int = 32) -> int:
    """Analytic weight count of a plain U-Net (base width 32) alternative.

    Standard layout: double 3x3 conv per level with widths 32/64/128/256,
    a 512-wide bottleneck, transposed-conv upsampling and a 1x1 head. Used
    only to check the size advantage of the attention-fusion extractor.
    """
    widths = [32, 64, 128, 256]

    def conv(cin, cout, k=3):
        return cin * cout * k * k + cout

    total = 0
    cin = in_channels
    for w in widths:                      # encoder double convs
        total += conv(cin, w) + conv(w, w)
        cin = w
    total += conv(256, 512) + conv(512, 512)   # bottleneck
    up_in = 512
    for w in reversed(widths):            # up-conv + double conv on concat
        total += conv(up_in, w, k=2)
        total += conv(2 * w, w) + conv(w, w)
        up_in = w
    total += conv(32, out_features, k=1)
    return total
