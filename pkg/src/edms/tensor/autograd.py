"""Reverse-mode differentiation for the training path.

The forward functions here are BLAS-backed (im2col + matmul) and work in
any float dtype; they compute the same functions as :mod:`kernels` but with
a different summation order, so they are only used where bit-exactness is
not needed (training, gradient checks).  Each op returns a :class:`Var`
that remembers how to push an upstream gradient back to its inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .kernels import conv_output_size, reflect_index


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def backward(self, grad=None):
        """Accumulate gradients of this node into every ancestor's ``grad``."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.value)
        self.grad = grad
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def const(x) -> Var:
    return Var(np.asarray(x))


def _pad(x: np.ndarray, pad: int):
    h, w = x.shape[-2:]
    iy, ix = reflect_index(h, pad), reflect_index(w, pad)
    return x[..., iy[:, None], ix[None, :]], (iy, ix)


def _fold(g: np.ndarray, index: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Sum a padded axis back onto its ``n`` source positions."""
    pad = (index.size - n) // 2
    g = np.moveaxis(g, axis, 0)
    out = g[pad:pad + n].copy()
    for p in (*range(pad), *range(pad + n, index.size)):
        out[index[p]] += g[p]
    return np.moveaxis(out, 0, axis)


def _unpad(g: np.ndarray, index, shape) -> np.ndarray:
    iy, ix = index
    g = _fold(g, iy, shape[-2], g.ndim - 2)
    return np.ascontiguousarray(_fold(g, ix, shape[-1], g.ndim - 1))


def conv2d(x: Var, w: Var, b: Var, stride: int = 1) -> Var:
    xv, wv, bv = x.value, w.value, b.value
    oc, ic, s, _ = wv.shape
    if xv.shape[1] != ic:
        raise ValueError(f"channel mismatch: input has {xv.shape[1]}, kernel expects {ic}")
    xp, index = _pad(xv, (s - 1) // 2)
    oh = conv_output_size(xv.shape[2], s, stride)
    ow = conv_output_size(xv.shape[3], s, stride)
    cols = sliding_window_view(xp, (s, s), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    y = np.tensordot(cols, wv, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y + bv[None, :, None, None])

    def backward(gy):
        gw = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))
        gb = gy.sum(axis=(0, 2, 3))
        gcols = np.tensordot(gy, wv, axes=([1], [0]))  # n, oh, ow, ic, s, s
        gxp = np.zeros_like(xp)
        for ky in range(s):
            rows = slice(ky, ky + stride * (oh - 1) + 1, stride)
            for kx in range(s):
                cs = slice(kx, kx + stride * (ow - 1) + 1, stride)
                gxp[:, :, rows, cs] += gcols[..., ky, kx].transpose(0, 3, 1, 2)
        return _unpad(gxp, index, xv.shape), gw, gb

    return Var(y, (x, w, b), backward)


def conv2d_transpose(x: Var, w: Var, b: Var) -> Var:
    """x2 up-sampling transposed 3x3 conv; kernel layout (out_c, in_c, 3, 3)."""
    xv, wv, bv = x.value, w.value, b.value
    n, c, h, wd = xv.shape
    oc = wv.shape[0]
    if c != wv.shape[1]:
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {wv.shape[1]}")
    full = np.zeros((n, oc, 2 * h + 1, 2 * wd + 1), dtype=xv.dtype)
    for ky in range(3):
        for kx in range(3):
            contrib = np.tensordot(xv, wv[:, :, ky, kx], axes=([1], [1])).transpose(0, 3, 1, 2)
            full[:, :, ky:ky + 2 * h:2, kx:kx + 2 * wd:2] += contrib
    y = np.ascontiguousarray(full[:, :, 1:, 1:] + bv[None, :, None, None])

    def backward(gy):
        gfull = np.zeros_like(full)
        gfull[:, :, 1:, 1:] = gy
        gx = np.zeros_like(xv)
        gw = np.zeros_like(wv)
        for ky in range(3):
            for kx in range(3):
                gs = gfull[:, :, ky:ky + 2 * h:2, kx:kx + 2 * wd:2]
                gx += np.tensordot(gs, wv[:, :, ky, kx], axes=([1], [0])).transpose(0, 3, 1, 2)
                gw[:, :, ky, kx] = np.tensordot(gs, xv, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw, gy.sum(axis=(0, 2, 3))

    return Var(y, (x, w, b), backward)


def instance_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    xv = x.value
    mean = xv.mean(axis=(2, 3), keepdims=True)
    xc = xv - mean
    var = np.square(xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g = gamma.value[None, :, None, None]
    y = xhat * g + beta.value[None, :, None, None]

    def backward(gy):
        ggamma = (gy * xhat).sum(axis=(0, 2, 3))
        gbeta = gy.sum(axis=(0, 2, 3))
        gxhat = gy * g
        gx = inv * (gxhat - gxhat.mean(axis=(2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=(2, 3), keepdims=True))
        return gx, ggamma, gbeta

    return Var(y.astype(xv.dtype, copy=False), (x, gamma, beta), backward)


def relu(x: Var) -> Var:
    mask = x.value > 0
    return Var(x.value * mask, (x,), lambda gy: (gy * mask,))


def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    return Var(t, (x,), lambda gy: (gy * (1 - t * t),))


def clamp(x: Var, lo: float = -1.0, hi: float = 1.0) -> Var:
    mask = (x.value > lo) & (x.value < hi)
    return Var(np.clip(x.value, lo, hi), (x,), lambda gy: (gy * mask,))


def add(a: Var, b: Var) -> Var:
    return Var(a.value + b.value, (a, b), lambda gy: (gy, gy))


def concat(a: Var, b: Var) -> Var:
    """Channel concatenation."""
    ca = a.value.shape[1]
    y = np.concatenate([a.value, b.value], axis=1)
    return Var(y, (a, b), lambda gy: (gy[:, :ca], gy[:, ca:]))


def resize_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """(dst, src) interpolation matrix of the half-pixel bilinear filter."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * src / dst - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m = np.zeros((dst, src))
    np.add.at(m, (np.arange(dst), lo), 1 - frac)
    np.add.at(m, (np.arange(dst), hi), frac)
    return m.astype(dtype)


def bilinear_resize(x: Var, out_h: int, out_w: int) -> Var:
    xv = x.value
    ry = resize_matrix(xv.shape[2], out_h, xv.dtype)
    rx = resize_matrix(xv.shape[3], out_w, xv.dtype)
    y = ry @ xv @ rx.T
    return Var(y, (x,), lambda gy: (ry.T @ gy @ rx,))


def l1_loss(pred: Var, target) -> Var:
    """Mean absolute error against a constant target."""
    diff = pred.value - target
    n = diff.size
    y = np.abs(diff).mean()
    return Var(np.asarray(y), (pred,), lambda gy: (gy * np.sign(diff) / n,))


def softmax_cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Per-pixel softmax cross-entropy, averaged over all pixels.

    ``logits`` is (n, L, h, w); ``labels`` holds integer classes (n, h, w).
    """
    z = logits.value
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n, k, h, w = z.shape
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, labels[:, None].astype(np.intp), 1, axis=1)
    logp = z - np.log(e.sum(axis=1, keepdims=True))
    count = n * h * w
    loss = -(onehot * logp).sum() / count
    return Var(np.asarray(loss), (logits,), lambda gy: (gy * (p - onehot) / count,))
