"""Minimal reverse-mode tensor math: just enough for the detector backend."""

from . import functional
from .functional import (
    SELU_ALPHA,
    SELU_LAMBDA,
    batchnorm1d,
    conv1d,
    linear,
    selu,
    sigmoid,
    softmax,
    tanh,
    weighted_softmax_ce,
)
from .layers import LSTM, BatchNorm1d, Conv1d, Linear, MHAPool, Module
from .optim import Adam, AdamState
from .tensor import Parameter, Tensor, concat, slice_axis, stack, transpose

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm1d",
    "Conv1d",
    "LSTM",
    "Linear",
    "MHAPool",
    "Module",
    "Parameter",
    "SELU_ALPHA",
    "SELU_LAMBDA",
    "Tensor",
    "batchnorm1d",
    "concat",
    "conv1d",
    "functional",
    "linear",
    "selu",
    "sigmoid",
    "slice_axis",
    "softmax",
    "stack",
    "tanh",
    "transpose",
    "weighted_softmax_ce",
]
