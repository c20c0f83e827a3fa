"""Two-step training (base networks, then SMapNet) at toy scale.

Step 1 trains CompNet and FineNet jointly with the ground-truth segment as
FineNet's side input.  Step 2 freezes them, extracts degraded segments
exactly as the codec does, and fits SMapNet to map them back to the ground
truth.  A small segmenter is trained beforehand because the codec needs
one at both ends.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nets
from .nets import TAPE, WeightSet, final_layer_prefix, init_params, run_network
from .pipeline import denormalize, extract_segment, normalize
from .segmenter import colorize, palette
from .tensor import autograd as ag

log = logging.getLogger(__name__)

STAGES = ("segmenter", "base", "smapnet")


class TrainingDiverged(FloatingPointError):
    """The loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "base"
    batch_size: int = 32
    lr: float = 5e-4
    final_lr_factor: float = 0.1
    epochs: int = 150
    seed: int = 0
    image_size: int = 256
    width: int = nets.FULL_WIDTH
    smap_width: int = nets.FULL_WIDTH
    classes: int = 4
    # Parameter-name prefixes to update; None trains every parameter of the stage.
    trainable: tuple | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.image_size % 8:
            raise ValueError("image size must be a multiple of 8")


# --- synthetic data ---------------------------------------------------------

_BASE_COLORS = [(70, 90, 120), (200, 60, 50), (60, 170, 80), (220, 200, 60)]


def class_color(k: int) -> np.ndarray:
    if k < len(_BASE_COLORS):
        return np.array(_BASE_COLORS[k], dtype=np.float64)
    return np.array([(37 * k) % 200 + 40, (91 * k) % 200 + 40, (53 * k) % 200 + 40], dtype=np.float64)


def _shape_mask(kind: int, rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if kind == 0:
        h, w = rng.integers(size // 8, size // 2 + 1, size=2)
        y0, x0 = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    if kind == 1:
        r = rng.uniform(size / 12, size / 4)
        cy, cx = rng.uniform(0, size, size=2)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    extent = rng.uniform(size / 6, size / 2)
    oy, ox = rng.uniform(0, size - extent, size=2)
    pts = rng.uniform(0, extent, size=(3, 2)) + (oy, ox)
    sides = []
    for i in range(3):
        (ay, ax), (by, bx) = pts[i], pts[(i + 1) % 3]
        sides.append((bx - ax) * (yy - ay) - (by - ay) * (xx - ax))
    inside = (sides[0] >= 0) & (sides[1] >= 0) & (sides[2] >= 0)
    return inside | ((sides[0] <= 0) & (sides[1] <= 0) & (sides[2] <= 0))


def gen_dataset(seed: int, count: int, size: int, classes: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Render ``count`` labelled images of random rectangles, circles and triangles.

    Class 0 is the background; shape classes 1..L-1 each have a base colour
    and a fixed kind (rectangle, circle, triangle, repeating).  Later shapes
    overwrite earlier ones in both the image and the class map.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(count):
        img = np.empty((size, size, 3), dtype=np.float64)
        img[:] = class_color(0) + rng.uniform(-20, 20)
        cmap = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(0, 5))):
            cls = int(rng.integers(1, classes))
            mask = _shape_mask((cls - 1) % 3, rng, size)
            img[mask] = class_color(cls) + rng.uniform(-25, 25)
            cmap[mask] = cls
        img += rng.normal(0.0, 4.0, size=img.shape)
        data.append((np.clip(np.rint(img), 0, 255).astype(np.uint8), cmap))
    return data


# --- optimiser --------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr) -> dict:
    """One bias-corrected Adam update, in place.  ``lr`` is a float or per-name dict."""
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        rate = lr[name] if isinstance(lr, dict) else lr
        p -= (rate * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params


# --- training loop ----------------------------------------------------------

def _batches(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch):
        yield order[i:i + batch]


def _fit(params: dict, loss_fn, n_items: int, cfg: TrainConfig, final_prefix: str,
         history: list | None) -> dict:
    names = [k for k in params if cfg.trainable is None or k.startswith(tuple(cfg.trainable))]
    lrs = {k: cfg.lr * (cfg.final_lr_factor if k.startswith(final_prefix) else 1.0) for k in names}
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState()
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in _batches(n_items, cfg.batch_size, rng):
            leaves = {k: ag.Var(v) for k, v in params.items()}
            loss = loss_fn(leaves, idx)
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingDiverged(f"{cfg.stage} loss became {value} at epoch {epoch}")
            loss.backward()
            grads = {k: leaves[k].grad if leaves[k].grad is not None else np.zeros_like(params[k])
                     for k in names}
            adam_step(params, grads, state, lrs)
            total += value * len(idx)
        mean = total / max(n_items, 1)
        log.info("%s epoch %d loss %.6f", cfg.stage, epoch, mean)
        if history is not None:
            history.append((epoch, cfg.stage, mean))
    return params


def _stack(data, classes):
    imgs = np.concatenate([normalize(img) for img, _ in data]) if data else np.zeros((0, 3, 8, 8), np.float32)
    labels = np.stack([m for _, m in data]) if data else np.zeros((0, 8, 8), np.uint8)
    pal = palette(classes)
    segs = np.concatenate([normalize(colorize(m, pal)) for _, m in data]) if data else imgs
    return imgs, labels, segs


def train_segmenter(cfg: TrainConfig, data: Sequence, history: list | None = None,
                    init: dict | None = None) -> WeightSet:
    """Per-pixel softmax cross-entropy on the labelled images."""
    imgs, labels, _ = _stack(data, cfg.classes)
    rng = np.random.default_rng(cfg.seed)
    params = dict(init) if init is not None else init_params("segmenter", rng, classes=cfg.classes)
    params = {k: np.array(v, dtype=np.float32) for k, v in params.items()}

    def loss_fn(p, idx):
        logits = run_network("segmenter", ag.Var(imgs[idx]), p, TAPE)
        return ag.softmax_cross_entropy(logits, labels[idx])

    _fit(params, loss_fn, len(imgs), cfg, final_layer_prefix("segmenter"), history)
    return WeightSet(params)


def base_loss(p: dict, imgs: np.ndarray, segs: np.ndarray) -> ag.Var:
    """L1 of the synthesis plus L1 of the bilinearly up-sampled compact image."""
    x = ag.Var(imgs)
    compact = run_network("compnet", x, p, TAPE)
    up = ag.bilinear_resize(compact, imgs.shape[2], imgs.shape[3])
    synth = run_network("finenet", ag.concat(up, ag.Var(segs)), p, TAPE)
    return ag.add(ag.l1_loss(synth, imgs), ag.l1_loss(up, imgs))


def train_base(cfg: TrainConfig, data: Sequence, history: list | None = None,
               init: dict | None = None) -> WeightSet:
    """Jointly train CompNet and FineNet with ground-truth segments as side input."""
    imgs, _, segs = _stack(data, cfg.classes)
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        init = {**init_params("compnet", rng, cfg.width), **init_params("finenet", rng, cfg.width)}
    params = {k: np.array(v, dtype=np.float32) for k, v in init.items()}
    _fit(params, lambda p, idx: base_loss(p, imgs[idx], segs[idx]), len(imgs), cfg,
         final_layer_prefix("finenet"), history)
    return WeightSet(params)


def degraded_segments(data: Sequence, weights: WeightSet) -> tuple[np.ndarray, np.ndarray]:
    """Codec-side segments for each image: (normalised colour maps, class maps)."""
    segs, classes = [], []
    for img, _ in data:
        compact = denormalize(nets.forward_compnet(normalize(img), weights))
        _, cls, seg = extract_segment(compact, img.shape[:2], weights)
        segs.append(seg)
        classes.append(cls)
    return np.concatenate(segs), np.stack(classes)


def smapnet_loss(out: ag.Var, truth: np.ndarray) -> ag.Var:
    """L1 of the clamped output plus the mean distance the output strays past [-1, 1].

    The clamp alone passes no gradient once an output leaves the range, and
    with a mostly black (-1) target the network then collapses to a constant
    map.  The excess term is zero inside the range; for targets in [-1, 1] the
    sum equals the unclamped L1.
    """
    clamped = ag.clamp(out)
    return ag.add(ag.l1_loss(clamped, truth), ag.l1_loss(out, clamped.value))


def pass_through_start(params: dict) -> dict:
    """Set SMapNet up to start near the identity on binary colour planes.

    The first layer normalises each plane, so absolute levels are lost; a
    +/- pair of centre taps per colour channel keeps the sign of each pixel
    relative to its plane mean, and the read-out maps that back to roughly
    0 above the mean and -1 below.  Needs ``smap_width >= 6``; the other
    filters keep their random start.
    """
    first, last = params["smapnet.0.weight"], params["smapnet.2.weight"]
    if first.shape[0] < 6:
        return params
    first[:6] = 0
    last[:] = 0
    for c in range(3):
        first[c, c, 1, 1] = 1.0
        first[c + 3, c, 1, 1] = -1.0
        last[c, c, 1, 1] = 0.4
        last[c, c + 3, 1, 1] = -0.4
    params["smapnet.2.bias"][:] = -0.6
    return params


def train_smapnet(cfg: TrainConfig, data: Sequence, base_weights: WeightSet,
                  history: list | None = None, init: dict | None = None) -> WeightSet:
    """Fit SMapNet from codec-extracted segments to ground-truth segments.

    Returns ``base_weights`` extended with the SMapNet parameters; the base
    networks are left untouched.
    """
    for net in ("compnet", "segmenter"):
        if not base_weights.has_network(net):
            raise ValueError(f"SMapNet training needs trained {net} weights")
    degraded, _ = degraded_segments(data, base_weights)
    _, _, truth = _stack(data, cfg.classes)
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        params = pass_through_start(init_params("smapnet", rng, cfg.smap_width))
    else:
        params = dict(init)
    params = {k: np.array(v, dtype=np.float32) for k, v in params.items()}

    def loss_fn(p, idx):
        return smapnet_loss(run_network("smapnet", ag.Var(degraded[idx]), p, TAPE), truth[idx])

    _fit(params, loss_fn, len(degraded), cfg, final_layer_prefix("smapnet"), history)
    return base_weights.merged(params)


# --- toy recipe -------------------------------------------------------------

@dataclass(frozen=True)
class ToyRecipe:
    """Seeded desk-scale recipe: 64x64 images, 4 classes, narrow networks.

    Full-width networks (64 base filters) cost about 15 s per 64x64 forward
    pass with the fixed-order kernels, so CompNet/FineNet run at ``width``
    and SMapNet at ``smap_width`` filters instead.  Held-out images come from
    ``seed + 1000``.
    """

    seed: int = 0
    train_count: int = 48
    heldout_count: int = 12
    size: int = 64
    classes: int = 4
    width: int = 8
    smap_width: int = 8
    batch_size: int = 8
    lr: float = 2e-3
    segmenter_epochs: int = 30
    base_epochs: int = 30
    smapnet_epochs: int = 30

    def config(self, stage: str) -> TrainConfig:
        epochs = {"segmenter": self.segmenter_epochs, "base": self.base_epochs,
                  "smapnet": self.smapnet_epochs}[stage]
        return TrainConfig(stage=stage, batch_size=self.batch_size, lr=self.lr, epochs=epochs,
                           seed=self.seed, image_size=self.size, width=self.width,
                           smap_width=self.smap_width, classes=self.classes)

    def train_data(self):
        return gen_dataset(self.seed, self.train_count, self.size, self.classes)

    def heldout_data(self):
        return gen_dataset(self.seed + 1000, self.heldout_count, self.size, self.classes)


def run_toy_recipe(recipe: ToyRecipe = ToyRecipe(), history: list | None = None) -> WeightSet:
    """Segmenter, then base networks, then SMapNet; returns the complete weight set."""
    data = recipe.train_data()
    seg = train_segmenter(recipe.config("segmenter"), data, history)
    base = train_base(recipe.config("base"), data, history)
    return train_smapnet(recipe.config("smapnet"), data, base.merged(dict(seg.items())), history)
