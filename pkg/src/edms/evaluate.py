"""Evaluation harness: per-image rows, RD points and the enhancement ablation."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields, is_dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, SynthesisMismatchError
from .metrics import ms_ssim, psnr, usable_scales
from .nets import WeightSet, forward_compnet, forward_smapnet, weights_from_bytes
from .pipeline import HASH_SIZE, decode, denormalize, encode, extract_segment, normalize
from .segmenter import colorize, palette, segment_scores, snap_to_palette

log = logging.getLogger(__name__)

VARIANTS = {"with-enhancement": True, "without-enhancement": False}
ROW_COLUMNS = ("image", "variant", "q", "bpp", "psnr_db", "ms_ssim", "enc_s", "dec_s", "synth_hash8")
RD_COLUMNS = ("variant", "q", "images", "bpp", "psnr_db", "ms_ssim", "enc_s", "dec_s")


@dataclass(frozen=True)
class EvalRow:
    image: str
    variant: str
    q: int
    bpp: float
    psnr_db: float
    ms_ssim: float
    enc_s: float
    dec_s: float
    synth_hash8: str

    @property
    def key(self):
        return self.image, self.q, self.variant


@dataclass(frozen=True)
class RdPoint:
    variant: str
    q: int
    images: int
    bpp: float
    psnr_db: float
    ms_ssim: float
    enc_s: float
    dec_s: float

    def __post_init__(self):
        if self.images < 1:
            raise ValueError("an RD point needs at least one image")
        if not self.bpp > 0:
            raise ValueError("bpp must be positive")


@dataclass(frozen=True)
class Failure:
    image: str
    variant: str
    q: int
    error: str


def evaluate_one(name: str, img: np.ndarray, w: WeightSet, q: int, variant: str) -> EvalRow:
    """Encode and decode one image, timing each call and scoring the decoded result."""
    enhance = VARIANTS[variant]
    t0 = time.perf_counter()
    data, enc_stats = encode(img, w, q, embed_hash=True, enhance=enhance)
    t1 = time.perf_counter()
    decoded, _ = decode(data, w)
    t2 = time.perf_counter()
    quality = ms_ssim(img, decoded) if usable_scales(img.shape) else math.nan
    return EvalRow(name, variant, q, 8.0 * len(data) / (img.shape[0] * img.shape[1]),
                   psnr(img, decoded), quality, t1 - t0, t2 - t1,
                   enc_stats.synth_hash[:2 * HASH_SIZE])


# Worker processes receive the weight set once, through the pool initialiser.
_WORKER_WEIGHTS: WeightSet | None = None


def _init_worker(blob: bytes) -> None:
    global _WORKER_WEIGHTS
    _WORKER_WEIGHTS = weights_from_bytes(blob)


def _job(args):
    name, img, q, variant = args
    try:
        return evaluate_one(name, img, _WORKER_WEIGHTS, q, variant)
    except (FormatError, SynthesisMismatchError, ArithmeticError, ValueError, KeyError) as exc:
        return Failure(name, variant, q, f"{type(exc).__name__}: {exc}")


def evaluate(images: Sequence[tuple[str, np.ndarray]], w: WeightSet, qs: Iterable[int],
             variants: Iterable[str] = ("with-enhancement",), workers: int = 1):
    """Run every (image, q, variant) triple; returns (rows, failures), both sorted.

    Failures do not stop the run.  ``workers > 1`` spreads images over
    processes; results do not depend on the worker count.
    """
    variants = list(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    jobs = [(name, img, q, v) for name, img in images for q in qs for v in variants]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(w.to_bytes(),)) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        global _WORKER_WEIGHTS
        previous, _WORKER_WEIGHTS = _WORKER_WEIGHTS, w
        try:
            results = [_job(j) for j in jobs]
        finally:
            _WORKER_WEIGHTS = previous
    rows = sorted((r for r in results if isinstance(r, EvalRow)), key=lambda r: r.key)
    failures = sorted((r for r in results if isinstance(r, Failure)), key=lambda f: (f.image, f.q, f.variant))
    for f in failures:
        log.warning("%s q=%d %s failed: %s", f.image, f.q, f.variant, f.error)
    return rows, failures


def _mean(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return float(np.mean(values)) if values else math.nan


def rd_points(rows: Sequence[EvalRow]) -> list[RdPoint]:
    """Average rows per (variant, q).  Any infinite PSNR makes the mean infinite."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.variant, r.q), []).append(r)
    return [RdPoint(v, q, len(g), _mean(r.bpp for r in g), _mean(r.psnr_db for r in g),
                    _mean(r.ms_ssim for r in g), _mean(r.enc_s for r in g), _mean(r.dec_s for r in g))
            for (v, q), g in sorted(groups.items())]


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return f"{value:.6f}"
    return str(value)


def to_csv(records: Sequence, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(columns)
    for rec in records:
        out.writerow([_fmt(v) for v in (astuple(rec) if is_dataclass(rec) else rec)])
    return buf.getvalue()


def write_csv(path, records: Sequence, columns: Sequence[str] | None = None) -> None:
    """Write atomically: a reader never sees a half-written file."""
    if columns is None:
        columns = [f.name for f in fields(records[0])] if records else ROW_COLUMNS
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(to_csv(records, columns))
    os.replace(tmp, path)


# --- segment ablation -------------------------------------------------------

@dataclass(frozen=True)
class SegmentReport:
    l1_degraded: float
    l1_enhanced: float
    miou_degraded: float
    miou_enhanced: float


def segment_report(data: Sequence, w: WeightSet) -> SegmentReport:
    """Held-out comparison of codec-extracted segments before and after SMapNet.

    L1 is measured on normalised colour maps; mIoU snaps the enhanced map
    back to the nearest palette colour first.
    """
    classes = int(w["segmenter.2.weight"].shape[0])
    pal = palette(classes)
    l1_d, l1_e, iou_d, iou_e = [], [], [], []
    for img, truth in data:
        compact = denormalize(forward_compnet(normalize(img), w))
        _, degraded_cls, degraded = extract_segment(compact, img.shape[:2], w)
        enhanced = np.clip(forward_smapnet(degraded, w), -1, 1)
        gt = normalize(colorize(truth, pal))
        l1_d.append(float(np.mean(np.abs(degraded - gt))))
        l1_e.append(float(np.mean(np.abs(enhanced - gt))))
        snapped = snap_to_palette(denormalize(enhanced), pal)
        iou_d.append(segment_scores(degraded_cls, truth, classes)[1])
        iou_e.append(segment_scores(snapped, truth, classes)[1])
    return SegmentReport(_mean(l1_d), _mean(l1_e), _mean(iou_d), _mean(iou_e))
