"""Toy semantic segmenter run identically at encoder and decoder, plus palette tools."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .nets import run_network
from .tensor import kernels as K


def _voc_colormap(n: int = 256) -> np.ndarray:
    """The PASCAL VOC label colour table (bit-interleaved class index)."""
    cmap = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        cmap[i] = (r, g, b)
    return cmap


# Fixed, published order: entry i is the colour of class i.
COLOR_TABLE = _voc_colormap()


def palette(classes: int) -> np.ndarray:
    """First ``classes`` entries of :data:`COLOR_TABLE` as an (L, 3) uint8 array."""
    if not 2 <= classes <= len(COLOR_TABLE):
        raise ValueError(f"class count must be in [2, {len(COLOR_TABLE)}]")
    return COLOR_TABLE[:classes].copy()


def forward_segmenter(img_norm, w: Mapping, classes: int) -> np.ndarray:
    """Per-pixel class map of a normalised 1x3xHxW image.

    Argmax ties resolve to the smallest class index.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    x = K.as_tensor(img_norm)
    if x.shape[:2] != (1, 3):
        raise ValueError(f"segmenter input must be 1x3xHxW, got {x.shape}")
    logits = run_network("segmenter", x, w)
    if logits.shape[1] != classes:
        raise ValueError(f"weights produce {logits.shape[1]} classes, expected {classes}")
    return np.argmax(logits[0], axis=0).astype(np.uint8)


def colorize(class_map: np.ndarray, pal: np.ndarray) -> np.ndarray:
    """H x W class map -> H x W x 3 colour image."""
    class_map = np.asarray(class_map)
    pal = np.asarray(pal, dtype=np.uint8)
    if class_map.size and class_map.max() >= len(pal):
        raise ValueError(f"class {int(class_map.max())} outside palette of {len(pal)} entries")
    return pal[class_map]


def snap_to_palette(img: np.ndarray, pal: np.ndarray) -> np.ndarray:
    """Nearest palette entry (squared RGB distance) per pixel; ties to the lowest index."""
    img = np.asarray(img, dtype=np.int64)
    pal = np.asarray(pal, dtype=np.int64)
    dist = np.square(img[:, :, None, :] - pal[None, None, :, :]).sum(axis=-1)
    return np.argmin(dist, axis=-1).astype(np.uint8)


def segment_scores(pred: np.ndarray, truth: np.ndarray, classes: int) -> tuple[float, float]:
    """(pixel accuracy, mean IoU over classes present in ``truth``)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"dim mismatch: {pred.shape} vs {truth.shape}")
    accuracy = float(np.mean(pred == truth))
    ious = []
    for k in range(classes):
        in_truth = truth == k
        if not in_truth.any():
            continue
        in_pred = pred == k
        ious.append(np.logical_and(in_truth, in_pred).sum() / np.logical_or(in_truth, in_pred).sum())
    return accuracy, float(np.mean(ious)) if ious else 1.0
