"""Finite-difference verification of the backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag


@dataclass
class GradCheckReport:
    op: str
    trials: int
    tolerance: float
    max_rel_error: float = 0.0
    errors: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numerical_gradient(fn: Callable[..., np.ndarray], arrays: list, which: int,
                       weight: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of ``sum(fn(*arrays) * weight)`` w.r.t. ``arrays[which]``."""
    target = arrays[which]
    grad = np.zeros_like(target)
    flat, gflat = target.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float((fn(*arrays) * weight).sum())
        flat[i] = orig - step
        down = float((fn(*arrays) * weight).sum())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def _away_from(rng, shape, points, margin=0.05):
    """Uniform values in [-2, 2] nudged away from the kinks in ``points``."""
    x = rng.uniform(-2, 2, size=shape)
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.where(x[close] >= p, margin, -margin) * 2
    return x


def _dims(rng, lo=1, hi=6):
    return [int(rng.integers(lo, hi + 1)) for _ in range(4)]


def _case(op: str, rng):
    """Build (graph builder over Vars, input arrays, input names) for one trial."""
    n, c, h, w = _dims(rng)
    n = min(n, 2)
    if op == "conv2d":
        s = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 3))
        oc = int(rng.integers(1, 5))
        arrays = [rng.normal(size=(n, c, h, w)), rng.normal(size=(oc, c, s, s)), rng.normal(size=oc)]
        return (lambda x, k, b: ag.conv2d(x, k, b, stride)), arrays, ["input", "kernel", "bias"]
    if op == "conv2d_transpose":
        oc = int(rng.integers(1, 5))
        arrays = [rng.normal(size=(n, c, h, w)), rng.normal(size=(oc, c, 3, 3)), rng.normal(size=oc)]
        return ag.conv2d_transpose, arrays, ["input", "kernel", "bias"]
    if op == "instance_norm":
        h, w = max(h, 2), max(w, 2)
        arrays = [rng.normal(size=(n, c, h, w)), rng.normal(size=c), rng.normal(size=c)]
        return ag.instance_norm, arrays, ["input", "gamma", "beta"]
    if op == "relu":
        return ag.relu, [_away_from(rng, (n, c, h, w), [0.0])], ["input"]
    if op == "tanh":
        return ag.tanh, [rng.normal(size=(n, c, h, w))], ["input"]
    if op == "clamp":
        return ag.clamp, [_away_from(rng, (n, c, h, w), [-1.0, 1.0])], ["input"]
    if op == "bilinear_resize":
        oh, ow = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        return (lambda x: ag.bilinear_resize(x, oh, ow)), [rng.normal(size=(n, c, h, w))], ["input"]
    if op == "l1_loss":
        target = rng.normal(size=(n, c, h, w))
        pred = target + _away_from(rng, target.shape, [0.0])
        return (lambda p: ag.l1_loss(p, target)), [pred], ["input"]
    if op == "softmax_cross_entropy":
        labels = rng.integers(0, c, size=(n, h, w))
        return (lambda z: ag.softmax_cross_entropy(z, labels)), [rng.normal(size=(n, c, h, w))], ["input"]
    if op == "concat":
        arrays = [rng.normal(size=(n, c, h, w)), rng.normal(size=(n, int(rng.integers(1, 4)), h, w))]
        return ag.concat, arrays, ["left", "right"]
    raise KeyError(f"unknown op {op!r}")


DIFFERENTIABLE_OPS = (
    "conv2d", "conv2d_transpose", "instance_norm", "relu", "tanh", "clamp",
    "bilinear_resize", "l1_loss", "softmax_cross_entropy", "concat",
)


def gradient_check(op: str, trials: int = 10, tolerance: float = 1e-4,
                   seed: int = 0, step: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``op`` against float64 central differences.

    Failures are reported through the returned object, never raised.
    """
    if op not in DIFFERENTIABLE_OPS:
        raise ValueError(f"unknown op {op!r}; expected one of {DIFFERENTIABLE_OPS}")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(op, trials, tolerance)
    for _ in range(trials):
        build, arrays, names = _case(op, rng)
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        leaves = [ag.Var(a.copy()) for a in arrays]
        out = build(*leaves)
        weight = rng.normal(size=np.shape(out.value))
        out.backward(weight)

        def value(*xs):
            return build(*[ag.Var(x) for x in xs]).value

        for i, (leaf, name) in enumerate(zip(leaves, names)):
            numeric = numerical_gradient(value, arrays, i, weight, step)
            analytic = leaf.grad if leaf.grad is not None else np.zeros_like(numeric)
            err = relative_error(analytic, numeric)
            report.errors[name] = max(report.errors.get(name, 0.0), err)
            report.max_rel_error = max(report.max_rel_error, err)
    return report
