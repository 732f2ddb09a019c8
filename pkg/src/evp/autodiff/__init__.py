"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .functional import (
    bilinear_matrix,
    broadcast_to,
    concat,
    concat_channels,
    conv2d,
    group_norm,
    linear,
    pool,
    resize_bilinear,
    softmax,
)
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_shape,
    cumsum,
    div,
    elementwise,
    exp,
    log,
    masked_select,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    sqrt,
    square,
    sub,
    sum_,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
