"""Fixed-order float32 inference kernels.

Every kernel here is used on both sides of the codec, so results must be
bit-identical between the encoder and the decoder.  Loops are vectorised
across output elements only; for any single output element the floating
point additions happen in the documented order and each multiply/add is
rounded separately (numpy never fuses them).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

F32 = np.float32

# Below this many output positions per channel the tap loop is dominated by
# per-call overhead; the accumulate form does the same additions in one call.
SMALL_OUTPUT = 16


class NonFiniteError(ArithmeticError):
    """A kernel produced NaN or Inf."""


def _check_finite(y: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(y).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return y


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous rank-4 float32 array."""
    x = np.ascontiguousarray(x, dtype=F32)
    if x.ndim != 4:
        raise ValueError(f"expected a rank-4 (n, c, h, w) tensor, got shape {x.shape}")
    return x


def reflect_index(n: int, pad: int) -> np.ndarray:
    """Source indices for reflecting an axis of length ``n`` by ``pad`` on both sides.

    Reflection excludes the edge sample.  Pads wider than ``n - 1`` keep
    reflecting back and forth; an axis of length 1 degenerates to replication.
    """
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    h, w = x.shape[-2:]
    return x[..., reflect_index(h, pad)[:, None], reflect_index(w, pad)[None, :]]


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    pad = (kernel - 1) // 2
    return (size + 2 * pad - kernel) // stride + 1


def _check_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int):
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"kernel must be (out_c, in_c, s, s), got {weight.shape}")
    if weight.shape[2] % 2 == 0:
        raise ValueError("kernel size must be odd")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError("empty spatial dims")


def conv2d(x, weight, bias, stride: int = 1) -> np.ndarray:
    """Reflection-padded 2-D convolution.

    Each output element is accumulated from zero over input channel (outer),
    kernel row, kernel column (inner), then the bias is added.
    """
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=F32)
    bias = np.asarray(bias, dtype=F32)
    _check_conv(x, weight, bias, stride)
    n, c, h, w = x.shape
    oc, _, s, _ = weight.shape
    xp = reflect_pad(x, (s - 1) // 2)
    oh = conv_output_size(h, s, stride)
    ow = conv_output_size(w, s, stride)
    with np.errstate(over="ignore", invalid="ignore"):
        if n * oh * ow <= SMALL_OUTPUT:
            acc = _conv_accumulate(xp, weight, stride, oh, ow)
        else:
            acc = _conv_taps(xp, weight, stride, oh, ow)
        np.add(acc, bias[None, :, None, None], out=acc)
    return _check_finite(acc, "conv2d")


def _conv_taps(xp, weight, stride, oh, ow):
    n, c = xp.shape[:2]
    oc, _, s, _ = weight.shape
    acc = np.zeros((n, oc, oh, ow), dtype=F32)
    tmp = np.empty_like(acc)
    for ci in range(c):
        for ky in range(s):
            rows = slice(ky, ky + stride * (oh - 1) + 1, stride)
            for kx in range(s):
                cols = slice(kx, kx + stride * (ow - 1) + 1, stride)
                np.multiply(weight[:, ci, ky, kx][None, :, None, None],
                            xp[:, ci, rows, cols][:, None], out=tmp)
                np.add(acc, tmp, out=acc)
    return acc


def _conv_accumulate(xp, weight, stride, oh, ow):
    """Same summation order as :func:`_conv_taps`, as one sequential accumulate.

    Row 0 of the product stack is zero so the running sum starts from +0.0
    exactly like the tap loop.
    """
    n, c = xp.shape[:2]
    oc, _, s, _ = weight.shape
    win = sliding_window_view(xp, (s, s), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    taps = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * s * s, 1, n * oh * ow)
    wk = weight.reshape(oc, c * s * s).T[:, :, None]
    prod = np.empty((c * s * s + 1, oc, n * oh * ow), dtype=F32)
    prod[0] = 0
    np.multiply(wk, taps, out=prod[1:])
    np.add.accumulate(prod, axis=0, out=prod)
    return np.ascontiguousarray(prod[-1].reshape(oc, n, oh, ow).transpose(1, 0, 2, 3))


# Taps ordered so that, for every output element, contributions arrive in
# row-major order of the input elements that produce them: tap 1 and tap 2
# read input row m, tap 0 reads row m + 1.
_TAP_ORDER = (1, 2, 0)


def _up_slices(tap: int, size: int):
    """(input slice, output slice) for one tap of the x2 transposed conv."""
    if tap == 1:
        return slice(0, size), slice(0, 2 * size, 2)
    if tap == 2:
        return slice(0, size), slice(1, 2 * size, 2)
    return slice(1, size), slice(1, 2 * size - 2, 2)


def conv2d_transpose(x, weight, bias) -> np.ndarray:
    """Fractionally-strided 3x3 convolution doubling both spatial dims.

    Equivalent to scatter-accumulating every input element (row-major
    order) through the kernel with up-factor 2, cropping one leading row and
    column and keeping one trailing output row and column.  The kernel uses
    the (out_c, in_c, 3, 3) layout.
    """
    x = as_tensor(x)
    weight = np.asarray(weight, dtype=F32)
    bias = np.asarray(bias, dtype=F32)
    if weight.shape[2:] != (3, 3):
        raise ValueError("transposed convolution supports 3x3 kernels only")
    _check_conv(x, weight, bias, 1)
    n, c, h, w = x.shape
    oc = weight.shape[0]
    acc = np.zeros((n, oc, 2 * h, 2 * w), dtype=F32)
    for ci in range(c):
        for ky in _TAP_ORDER:
            iy, oy = _up_slices(ky, h)
            for kx in _TAP_ORDER:
                ix, ox = _up_slices(kx, w)
                src = x[:, ci, iy, ix][:, None]
                if src.size == 0:
                    continue
                acc[:, :, oy, ox] += weight[:, ci, ky, kx][None, :, None, None] * src
    np.add(acc, bias[None, :, None, None], out=acc)
    return _check_finite(acc, "conv2d_transpose")


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Per-plane normalisation with learned affine parameters.

    Moments are accumulated in float64 and rounded to float32; the variance
    is biased (divides by h*w).
    """
    x = as_tensor(x)
    gamma = np.asarray(gamma, dtype=F32)
    beta = np.asarray(beta, dtype=F32)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError("gamma/beta length must equal the channel count")
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=(2, 3), keepdims=True)
    var = np.square(x64 - mean).mean(axis=(2, 3), keepdims=True)
    mean = mean.astype(F32)
    var = var.astype(F32)
    scale = gamma[None, :, None, None] / np.sqrt(var + F32(eps))
    y = (x - mean) * scale + beta[None, :, None, None]
    return _check_finite(y, "instance_norm")


def relu(x) -> np.ndarray:
    x = as_tensor(x)
    return np.maximum(x, F32(0))


def tanh_act(x) -> np.ndarray:
    return np.tanh(as_tensor(x))


def _resize_taps(src: int, dst: int):
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * src / dst - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = (pos - lo).astype(F32)
    return lo, hi, frac


def bilinear_resize(x, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resampling with edge clamping.

    Columns are blended first, then rows, all in float32.
    """
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be >= 1")
    h, w = x.shape[2:]
    y0, y1, fy = _resize_taps(h, out_h)
    x0, x1, fx = _resize_taps(w, out_w)
    fx = fx[None, None, None, :]
    fy = fy[None, None, :, None]
    # a + (b - a) * f keeps constant regions exactly constant
    rows0 = x[:, :, y0, :]
    rows1 = x[:, :, y1, :]
    top = rows0[..., x0] + (rows0[..., x1] - rows0[..., x0]) * fx
    bottom = rows1[..., x0] + (rows1[..., x1] - rows1[..., x0]) * fx
    y = top + (bottom - top) * fy
    return _check_finite(y.astype(F32, copy=False), "bilinear_resize")
