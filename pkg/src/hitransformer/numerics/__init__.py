"""Tensor substrate: autodiff tensors, primitives, Adam, gradcheck, checkpoints."""

from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .gradcheck import GradcheckReport, finite_diff_gradcheck, relative_error
from .init import glorot, normal, ones, parameter, zeros
from .optim import AdamState, adam_step, zero_grad
from .tensor import (
    NEG_INF,
    Tensor,
    as_tensor,
    concat,
    cross_entropy,
    dropout,
    embedding,
    exp,
    frozen_relu_patterns,
    get_dtype,
    grad_enabled,
    layer_norm,
    log,
    masked_softmax,
    matmul,
    mean,
    no_grad,
    precision,
    relu,
    reshape,
    set_check_finite,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "NEG_INF",
    "AdamState",
    "GradcheckReport",
    "Tensor",
    "adam_step",
    "as_tensor",
    "concat",
    "cross_entropy",
    "dropout",
    "embedding",
    "exp",
    "finite_diff_gradcheck",
    "frozen_relu_patterns",
    "get_dtype",
    "glorot",
    "grad_enabled",
    "layer_norm",
    "load_checkpoint",
    "load_into",
    "log",
    "masked_softmax",
    "matmul",
    "mean",
    "no_grad",
    "normal",
    "ones",
    "parameter",
    "precision",
    "relative_error",
    "relu",
    "reshape",
    "save_checkpoint",
    "set_check_finite",
    "tanh",
    "transpose",
    "tsum",
    "zero_grad",
    "zeros",
]
