"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from deepsim.tensor import Tensor


def fd_gradient(loss_fn, tensors, h=1e-5):
    """Central finite-difference gradients of a scalar loss w.r.t. each tensor.

    loss_fn takes no arguments and reads the current .data of the tensors.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def check_gradients(build_loss, tensors, rel_tol=1e-4, h=1e-5):
    """Assert analytic grads of build_loss() match central differences.

    build_loss constructs the graph fresh from the given leaf tensors and
    returns the scalar loss Tensor.
    """
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]
    numeric = fd_gradient(lambda: float(build_loss().data), tensors, h=h)
    for a, n in zip(analytic, numeric):
        scale = max(1.0, float(np.abs(a).max()), float(np.abs(n).max()))
        err = float(np.abs(a - n).max()) / scale
        assert err < rel_tol, f"gradient mismatch: rel err {err:.3e}"
    for t in tensors:
        t.zero_grad()


def conv2d_oracle(x, kernel, bias, stride=1, padding=1):
    """Naive triple-loop direct-sum convolution (cross-correlation) oracle."""
    C, H, W = x.shape
    O, _, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((O, oh, ow))
    for o in range(O):
        for i in range(oh):
            for j in range(ow):
                s = 0.0
                for c in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            s += xp[c, i * stride + a, j * stride + b] * kernel[o, c, a, b]
                out[o, i, j] = s + bias[o]
    return out
