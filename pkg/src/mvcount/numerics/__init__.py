"""Differentiable numpy substrate used by the model."""
from mvcount.numerics.tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    exp,
    finite_checks,
    gather_rows,
    no_grad,
    relu,
    reshape,
    scatter_rows,
    set_default_dtype,
    sqrt,
    square,
    stack,
    transpose,
)
from mvcount.numerics.functional import (
    bilinear_sample2d,
    conv,
    conv2d,
    conv3d,
    conv_transpose,
    deconv3d,
    grid_sample,
    l2_norm,
    layer_norm,
    masked_softmax,
    softmax,
    upsample_nearest,
)
from mvcount.numerics.nn import Conv, Deconv3d, LayerNorm, Linear, Mlp, Module, Parameter, mlp_apply
from mvcount.numerics.optim import Optimizer, OptimizerConfig, optimizer_step
from mvcount.numerics.gradcheck import GradCheckReport, finite_diff_gradient, gradient_check

__all__ = [
    "Tensor", "Parameter", "Module", "Linear", "Mlp", "Conv", "Deconv3d", "LayerNorm",
    "as_tensor", "concat", "stack", "reshape", "transpose", "scatter_rows", "gather_rows", "relu", "exp",
    "sqrt", "square", "no_grad", "finite_checks", "default_dtype", "set_default_dtype",
    "softmax", "masked_softmax", "layer_norm", "conv", "conv2d", "conv3d", "conv_transpose",
    "deconv3d", "grid_sample", "bilinear_sample2d", "upsample_nearest", "l2_norm", "mlp_apply",
    "Optimizer", "OptimizerConfig", "optimizer_step", "finite_diff_gradient", "gradient_check",
    "GradCheckReport",
]
