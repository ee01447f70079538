"""Minimal dense tensor with reverse-mode automatic differentiation.

Covers exactly the operator set needed by the feature extractor, the MLP
head and the training losses: elementwise arithmetic, activations,
reductions, 2-D matmul, 3x3/1x1 convolution, 2x average pooling, bilinear
2x upsampling and horizontal sub-pixel warping. Everything is float64 and
single-threaded; graphs are built per forward pass (define-by-run).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """N-dimensional float64 array, optionally tracked on a gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self):
        self.grad = None
        self._done = False

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def backward(self):
        """Populate .grad of every requires_grad tensor reachable from self.

        self must be scalar. Calling backward twice on the same node without
        zero_grad() is an error (grads would silently double-accumulate).
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._done:
            raise RuntimeError("backward already ran on this tensor; reset grads first")
        self._done = True

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:
            out._backward = lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:
            out._backward = lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:
            out._backward = lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data ** 2), other.shape),
            )
        return out

    def __matmul__(self, other):
        other = self._wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError("matmul expects 2-D operands")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out = _node(self.data @ other.data, (self, other))
        if out.requires_grad:
            out._backward = lambda g: (g @ other.data.T, self.data.T @ g)
        return out

    # -- pointwise ----------------------------------------------------------

    def relu(self):
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out.requires_grad:
            mask = self.data > 0.0
            out._backward = lambda g: (g * mask,)
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        # keep the output strictly inside (0, 1) even when exp saturates
        s = np.clip(s, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        out = _node(s, (self,))
        if out.requires_grad:
            out._backward = lambda g: (g * s * (1.0 - s),)
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda g: (g / self.data,)
        return out

    def sqrt(self):
        r = np.sqrt(self.data)
        out = _node(r, (self,))
        if out.requires_grad:
            # subgradient 0 at the origin, so masked-out zero-norm pixels
            # cannot turn a zero upstream gradient into NaN
            safe = np.where(r > 0, r, 1.0)
            out._backward = lambda g: (np.where(r > 0, g * 0.5 / safe, 0.0),)
        return out

    def maximum(self, c: float):
        """Elementwise max with a constant; subgradient 0 at the tie."""
        out = _node(np.maximum(self.data, c), (self,))
        if out.requires_grad:
            mask = self.data > c
            out._backward = lambda g: (g * mask,)
        return out

    def clamp(self, lo: float, hi: float):
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            mask = (self.data > lo) & (self.data < hi)
            out._backward = lambda g: (g * mask,)
        return out

    # -- reductions / reshaping ---------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def back(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                return (np.broadcast_to(g, self.shape).copy(),)
            out._backward = back
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        out = _node(self.data.reshape(*shape), (self,))
        if out.requires_grad:
            out._backward = lambda g: (g.reshape(self.shape),)
        return out

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)
        out = _node(self.data.transpose(axes), (self,))
        if out.requires_grad:
            out._backward = lambda g: (g.transpose(inv),)
        return out


def _node(data: np.ndarray, parents) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._wrap(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
    """Direct 2-D cross-correlation on a CHW tensor.

    kernel is (outC, inC, kh, kw); bias is (outC,). Zero padding.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d input must be CHW, got shape {x.shape}")
    C, H, W = x.shape
    O, Ci, kh, kw = kernel.shape
    if Ci != C:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, kernel expects {Ci}")
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeError(f"conv2d spatial dims {H}x{W} smaller than kernel {kh}x{kw}")
    if bias.shape != (O,):
        raise ShapeError(f"conv2d bias must have shape ({O},), got {bias.shape}")

    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p)))
    view = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out_data = np.einsum("chwij,ocij->ohw", view, kernel.data, optimize=True)
    out_data = out_data + bias.data[:, None, None]
    out = _node(out_data, (x, kernel, bias))
    if out.requires_grad:
        oh, ow = out_data.shape[1:]

        def back(g):
            gb = g.sum(axis=(1, 2))
            gk = np.einsum("ohw,chwij->ocij", g, view, optimize=True)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += np.einsum(
                        "ohw,oc->chw", g, kernel.data[:, :, i, j], optimize=True)
            gx = gxp[:, p:p + H, p:p + W] if p else gxp
            return gx, gk, gb

        out._backward = back
    return out


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling on CHW; odd dims are replicate-padded first."""
    C, H, W = x.shape
    if H == 0 or W == 0:
        raise ShapeError("avg_pool2 on zero-sized spatial dims")
    ph, pw = H % 2, W % 2
    xd = x.data
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, ph), (0, pw)), mode="edge")
    Hp, Wp = xd.shape[1:]
    out_data = xd.reshape(C, Hp // 2, 2, Wp // 2, 2).mean(axis=(2, 4))
    out = _node(out_data, (x,))
    if out.requires_grad:
        def back(g):
            gp = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
            if ph:
                gp[:, H - 1, :] += gp[:, H, :]
                gp = gp[:, :H, :]
            if pw:
                gp[:, :, W - 1] += gp[:, :, W]
                gp = gp[:, :, :W]
            return (gp,)
        out._backward = back
    return out


def _bilinear_axis_coeffs(n: int):
    """Source indices/weights for 2x bilinear upsampling, align_corners=False."""
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.clip(np.floor(src).astype(np.int64), 0, n - 1)
    i1 = np.clip(i0 + 1, 0, n - 1)
    w = np.clip(src - np.floor(src), 0.0, 1.0)
    w[src < 0] = 0.0
    w[src > n - 1] = 0.0
    return i0, i1, w


def upsample2(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling (align_corners=False) of a CHW tensor."""
    C, H, W = x.shape
    if H == 0 or W == 0:
        raise ShapeError("upsample2 on zero-sized spatial dims")
    r0, r1, wy = _bilinear_axis_coeffs(H)
    c0, c1, wx = _bilinear_axis_coeffs(W)
    wy_ = wy[None, :, None]
    wx_ = wx[None, None, :]
    yh = x.data[:, r0, :] * (1.0 - wy_) + x.data[:, r1, :] * wy_
    out_data = yh[:, :, c0] * (1.0 - wx_) + yh[:, :, c1] * wx_
    out = _node(out_data, (x,))
    if out.requires_grad:
        def back(g):
            # transpose of the two gather-interpolations, as scatter-adds
            gh = np.zeros((C, 2 * H, W))
            gt = np.moveaxis(g, 2, 0)              # (2W, C, 2H)
            acc = np.zeros((W, C, 2 * H))
            np.add.at(acc, c0, gt * (1.0 - wx)[:, None, None])
            np.add.at(acc, c1, gt * wx[:, None, None])
            gh = np.moveaxis(acc, 0, 2)            # (C, 2H, W)
            gt = np.moveaxis(gh, 1, 0)             # (2H, C, W)
            acc = np.zeros((H, C, W))
            np.add.at(acc, r0, gt * (1.0 - wy)[:, None, None])
            np.add.at(acc, r1, gt * wy[:, None, None])
            return (np.moveaxis(acc, 0, 1),)
        out._backward = back
    return out


def resample(x: Tensor, mode: str) -> Tensor:
    """Scale a CHW tensor by a factor of two: 'down2' pools, 'up2' is bilinear."""
    if mode == "down2":
        return avg_pool2(x)
    if mode == "up2":
        return upsample2(x)
    raise ValueError(f"unknown resample mode {mode!r}")


def warp_columns(x: Tensor, pos: np.ndarray):
    """Sample a CHW tensor along rows at fractional column positions.

    pos is (H, W): output(:, y, x) = linear interp of x's row y at pos[y, x].
    Returns (warped Tensor, in_bounds mask); out-of-bounds outputs are zero
    and receive/propagate no gradient.
    """
    C, H, W = x.shape
    if pos.shape != (H, W):
        raise ShapeError(f"warp position map must be (H, W)={H, W}, got {pos.shape}")
    inb = (pos >= 0.0) & (pos <= W - 1)
    x0 = np.floor(pos).astype(np.int64)
    w = pos - x0
    i0 = np.clip(x0, 0, W - 1)
    i1 = np.clip(x0 + 1, 0, W - 1)
    w0 = np.where(inb, 1.0 - w, 0.0)
    w1 = np.where(inb, w, 0.0)
    idx0 = np.broadcast_to(i0, (C, H, W))
    idx1 = np.broadcast_to(i1, (C, H, W))
    out_data = (np.take_along_axis(x.data, idx0, axis=2) * w0
                + np.take_along_axis(x.data, idx1, axis=2) * w1)
    out = _node(out_data, (x,))
    if out.requires_grad:
        ci, ri, _ = np.indices((C, H, W))

        def back(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, (ci, ri, idx0), g * w0)
            np.add.at(gx, (ci, ri, idx1), g * w1)
            return (gx,)

        out._backward = back
    return out, inb


class ConvParams:
    """Weights of one convolution layer (kernel (outC, inC, kh, kw), bias (outC,))."""

    def __init__(self, kernel, bias, stride: int = 1, padding: int = 1):
        self.kernel = Tensor._wrap(kernel)
        self.bias = Tensor._wrap(bias)
        if self.kernel.data.ndim != 4:
            raise ShapeError(f"kernel must be 4-D, got shape {self.kernel.shape}")
        self.stride = int(stride)
        self.padding = int(padding)

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    def apply(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, self.stride, self.padding)


def residual_block(x: Tensor, params) -> Tensor:
    """x + body(x) with body = conv-ReLU-conv-ReLU-conv over three ConvParams."""
    p1, p2, p3 = params
    if p3.out_channels != x.shape[0]:
        raise ShapeError(
            f"residual skip needs matching channels: body outputs {p3.out_channels}, "
            f"input has {x.shape[0]}")
    body = p3.apply(p2.apply(p1.apply(x).relu()).relu())
    return x + body


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return x.relu()
    if kind == "sigmoid":
        return x.sigmoid()
    raise ValueError(f"unknown pointwise kind {kind!r}")


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean of a CHW tensor, kept as (C, 1, 1)."""
    C, H, W = x.shape
    return x.sum(axis=(1, 2), keepdims=True) * (1.0 / float(H * W))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias for 1-D or batched 2-D x; weight is (in, out)."""
    single = x.data.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear dims mismatch: input {x.shape} vs weight {weight.shape}")
    out = x @ weight + bias
    return out.reshape(-1) if single else out
