"""Minimal dense-tensor algebra with reverse-mode differentiation."""

from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    binary_cross_entropy,
    concat,
    cross_entropy,
    dropout,
    embedding,
    exp,
    getitem,
    grad_enabled,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mse,
    multiply,
    neg,
    no_grad,
    relu,
    reshape,
    scalenorm,
    sigmoid,
    softmax,
    tensor_sum,
    transpose,
)
from .init import init_scaled, zeros
from .optim import Adam, OptimizerState, noam_lr
from .gradcheck import gradcheck, numeric_grad, relative_error

__all__ = [name for name in dir() if not name.startswith("_")]
