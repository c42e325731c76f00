"""Minimal float32 tensor kernel with reverse-mode autodiff and Adam."""

from .ops import (
    add,
    bce_loss,
    ce_loss,
    concat_lastdim,
    embedding_lookup,
    ffn,
    init_params,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    sigmoid,
    slice_seq,
    softmax_lastdim,
    sum_all,
    transpose_last2,
    uniform_param,
    zeros_param,
)
from .optim import Adam
from .tensor import Parameter, Tensor, backward, collect_named

__all__ = [
    "Adam",
    "Parameter",
    "Tensor",
    "add",
    "backward",
    "bce_loss",
    "ce_loss",
    "collect_named",
    "concat_lastdim",
    "embedding_lookup",
    "ffn",
    "init_params",
    "layer_norm",
    "linear",
    "matmul",
    "mean_all",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "slice_seq",
    "softmax_lastdim",
    "sum_all",
    "transpose_last2",
    "uniform_param",
    "zeros_param",
]
