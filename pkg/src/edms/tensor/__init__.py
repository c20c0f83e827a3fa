"""Float32 tensor kernels, their gradients and a finite-difference harness."""

from .kernels import (
    NonFiniteError,
    as_tensor,
    bilinear_resize,
    conv2d,
    conv2d_transpose,
    instance_norm,
    reflect_pad,
    relu,
    tanh_act,
)
from .gradcheck import DIFFERENTIABLE_OPS, GradCheckReport, gradient_check

__all__ = [
    "NonFiniteError", "as_tensor", "bilinear_resize", "conv2d", "conv2d_transpose",
    "instance_norm", "reflect_pad", "relu", "tanh_act",
    "DIFFERENTIABLE_OPS", "GradCheckReport", "gradient_check",
]
