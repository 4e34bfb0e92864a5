"""Minimal reverse-mode differentiable computation substrate."""

from .tensor import (
    NumericError,
    Tensor,
    avg_pool2d,
    clip,
    concat,
    conv2d,
    current_dtype,
    dot,
    exp,
    finite_checks,
    l1_norm,
    l2_norm,
    leaky_relu,
    log,
    matmul,
    no_grad,
    precision,
    relu,
    reshape,
    sigmoid,
    slice_rows,
    sqrt,
    tabs,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .graph import Affine, Conv2d, Graph, gradients
from .optim import Adam, SGD

__all__ = [
    "Adam",
    "SGD",
    "Affine",
    "Conv2d",
    "Graph",
    "NumericError",
    "Tensor",
    "avg_pool2d",
    "clip",
    "concat",
    "conv2d",
    "current_dtype",
    "dot",
    "exp",
    "finite_checks",
    "gradients",
    "l1_norm",
    "l2_norm",
    "leaky_relu",
    "log",
    "matmul",
    "no_grad",
    "precision",
    "relu",
    "reshape",
    "sigmoid",
    "slice_rows",
    "sqrt",
    "tabs",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
]
