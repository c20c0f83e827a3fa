"""The two transmitted layers.

The compact image is coded losslessly with the LOCO-I median edge
detector and one adaptive model per channel.  The residual is scalar
quantised with step Q (round half away from zero), zigzag mapped and coded
as a byte token with an escape for large magnitudes.
"""

from __future__ import annotations

import numpy as np

from .entropy import AdaptiveModel, RangeDecoder, RangeEncoder
from .errors import FormatError

ESCAPE = 255


def med_predict(left: int, up: int, upleft: int) -> int:
    """Median edge detector prediction from the three causal neighbours."""
    lo, hi = (left, up) if left < up else (up, left)
    if upleft >= hi:
        return lo
    if upleft <= lo:
        return hi
    return left + up - upleft


def _med_plane(plane: np.ndarray) -> np.ndarray:
    """Vectorised MED predictions; missing neighbours read as 0."""
    p = np.pad(plane.astype(np.int32), ((1, 0), (1, 0)))
    left, up, upleft = p[1:, :-1], p[:-1, 1:], p[:-1, :-1]
    lo, hi = np.minimum(left, up), np.maximum(left, up)
    return np.where(upleft >= hi, lo, np.where(upleft <= lo, hi, left + up - upleft))


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 uint8 image, got {img.dtype} {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image dims must be at least 1x1")
    return img


def encode_compact(img: np.ndarray) -> bytes:
    img = _check_image(img)
    enc = RangeEncoder()
    for c in range(3):
        plane = img[:, :, c]
        symbols = ((plane.astype(np.int32) - _med_plane(plane)) & 0xFF).ravel().tolist()
        model = AdaptiveModel(256)
        for s in symbols:
            enc.encode(model, s)
    return enc.finish()


def decode_compact(data: bytes, dims: tuple[int, int]) -> np.ndarray:
    h, w = dims
    if h < 1 or w < 1:
        raise ValueError("image dims must be at least 1x1")
    dec = RangeDecoder(data)
    out = np.zeros((h, w, 3), dtype=np.uint8)
    for c in range(3):
        model = AdaptiveModel(256)
        prev = [0] * (w + 1)  # row above, with a leading 0 for the missing up-left
        for y in range(h):
            row = [0] * (w + 1)
            for x in range(w):
                pred = med_predict(row[x], prev[x + 1], prev[x])
                row[x + 1] = (pred + dec.decode(model)) & 0xFF
            out[y, :, c] = row[1:]
            prev = row
    return out


# --- residual layer ---------------------------------------------------------

def _check_q(q: int) -> int:
    q = int(q)
    if not 1 <= q <= 64:
        raise ValueError("quantiser step must be in [1, 64]")
    return q


def max_level(q: int) -> int:
    """Largest |quantised level| a residual in [-255, 255] can produce."""
    return (2 * 255 + q) // (2 * q)


def quantize_residual(r: np.ndarray, q: int) -> np.ndarray:
    """sign(r) * floor((|r| + Q/2) / Q), computed exactly in integers."""
    q = _check_q(q)
    r = np.asarray(r, dtype=np.int32)
    if r.size and np.abs(r).max() > 255:
        raise ValueError("residual outside [-255, 255]")
    mag = (2 * np.abs(r) + q) // (2 * q)
    return (np.sign(r) * mag).astype(np.int16)


def dequantize(levels: np.ndarray, q: int) -> np.ndarray:
    return (np.asarray(levels, dtype=np.int32) * _check_q(q)).astype(np.int16)


def zigzag(levels: np.ndarray) -> np.ndarray:
    v = np.asarray(levels, dtype=np.int32)
    return np.where(v <= 0, -2 * v, 2 * v - 1)


def unzigzag(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.int32)
    return np.where(u & 1, (u + 1) // 2, -(u // 2))


def encode_residual(r: np.ndarray, q: int) -> bytes:
    """Quantise an HxWx3 residual and entropy code it channel by channel."""
    r = np.asarray(r)
    if r.ndim != 3 or r.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 residual, got {r.shape}")
    u = zigzag(quantize_residual(r, q))
    enc = RangeEncoder()
    escape = AdaptiveModel(256)
    for c in range(3):
        model = AdaptiveModel(256)
        for v in u[:, :, c].ravel().tolist():
            if v < ESCAPE:
                enc.encode(model, v)
            else:
                enc.encode(model, ESCAPE)
                enc.encode(escape, v - ESCAPE)
    return enc.finish()


def decode_residual(data: bytes, dims: tuple[int, int], q: int) -> np.ndarray:
    """Inverse of :func:`encode_residual`; returns the dequantised plane."""
    q = _check_q(q)
    h, w = dims
    dec = RangeDecoder(data)
    escape = AdaptiveModel(256)
    u = np.empty((3, h * w), dtype=np.int32)
    for c in range(3):
        model = AdaptiveModel(256)
        row = u[c]
        for i in range(h * w):
            v = dec.decode(model)
            if v == ESCAPE:
                v += dec.decode(escape)
            row[i] = v
    levels = unzigzag(u).reshape(3, h, w).transpose(1, 2, 0)
    if levels.size and np.abs(levels).max() > max_level(q):
        raise FormatError("decoded residual level out of range")
    return dequantize(levels, q)
