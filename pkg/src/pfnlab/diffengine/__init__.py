"""Minimal deterministic tensor math with reverse-mode differentiation."""

from .functional import cross_entropy, dropout, gelu, layer_norm, loss, mse_loss, relu, softmax, tanh
from .gradcheck import grad_check
from .params import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ParamEntry, ParamStore, adam_step, clip_grad_norm
from .tensor import (
    Graph,
    Tensor,
    add,
    backward,
    concat,
    current_graph,
    get_dtype,
    getitem,
    masked_fill,
    matmul,
    mean,
    mul,
    precision,
    reshape,
    sub,
    take,
    transpose,
    tsum,
)

__all__ = [
    "ADAM_BETA1",
    "ADAM_BETA2",
    "ADAM_EPS",
    "Graph",
    "ParamEntry",
    "ParamStore",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "clip_grad_norm",
    "concat",
    "cross_entropy",
    "current_graph",
    "dropout",
    "gelu",
    "get_dtype",
    "getitem",
    "grad_check",
    "layer_norm",
    "loss",
    "masked_fill",
    "matmul",
    "mean",
    "mse_loss",
    "mul",
    "precision",
    "relu",
    "reshape",
    "softmax",
    "sub",
    "take",
    "tanh",
    "transpose",
    "tsum",
]
