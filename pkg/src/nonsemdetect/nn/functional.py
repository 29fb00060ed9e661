"""Differentiable building blocks used by the detector backend."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, NumericError
from .tensor import Tensor, _coerce, _from_op

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _from_op(out, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _from_op(out, (a,), backward, "tanh")


def selu(a) -> Tensor:
    """Self-normalizing ELU: lambda*x for x > 0, lambda*alpha*(e^x - 1) otherwise."""
    a = _coerce(a)
    x = a.data
    neg = SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0.0, x, neg) * SELU_LAMBDA
    out = out.astype(x.dtype, copy=False)

    def backward(g):
        slope = np.where(x > 0.0, SELU_LAMBDA, out + SELU_LAMBDA * SELU_ALPHA)
        return (g * slope,)

    return _from_op(out, (a,), backward, "selu")


def softmax(a, axis: int) -> Tensor:
    """Max-subtracted softmax along one axis."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _from_op(out, (a,), backward, "softmax")


def linear(x, weight, bias=None) -> Tensor:
    """y = x @ weight.T + bias for x of shape (..., in), weight (out, in)."""
    x, weight = _coerce(x), _coerce(weight)
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        bias = _coerce(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        gw = g2.T @ x2
        if bias is not None:
            return gx, gw, g2.sum(axis=0)
        return gx, gw

    return _from_op(out, parents, backward, "linear")


def conv1d(x, weight, bias=None, padding: int = 0) -> Tensor:
    """Cross-correlation along time.

    x: (n, c_in, t), weight: (c_out, c_in, k), bias: (c_out,).
    Output length is t + 2*padding - k + 1.
    """
    x, weight = _coerce(x), _coerce(weight)
    n, c_in, t = x.data.shape
    c_out, c_in_w, k = weight.data.shape
    if c_in != c_in_w:
        raise ConfigurationError(
            f"conv1d channel mismatch: input has {c_in}, weight expects {c_in_w}"
        )
    if t + 2 * padding < k:
        raise ConfigurationError(
            f"conv1d input too short: t={t} with padding {padding} < kernel {k}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    windows = sliding_window_view(xp, k, axis=2)  # (n, c_in, t_out, k)
    out = np.einsum("nitk,oik->not", windows, weight.data)
    parents = (x, weight)
    if bias is not None:
        bias = _coerce(bias)
        out = out + bias.data[:, None]
        parents = (x, weight, bias)

    def backward(g):
        gw = np.einsum("not,nitk->oik", g, windows)
        gpad = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1)))
        gwin = sliding_window_view(gpad, k, axis=2)  # (n, c_out, t + 2p, k)
        gxp = np.einsum("nomq,oiq->nim", gwin, weight.data[:, :, ::-1])
        gx = gxp[:, :, padding : padding + t] if padding else gxp
        if bias is not None:
            return gx, gw, g.sum(axis=(0, 2))
        return gx, gw

    return _from_op(np.ascontiguousarray(out), parents, backward, "conv1d")


def batchnorm1d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of (n, c, t) over the (n, t) axes.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (momentum-weighted; running variance uses the
    unbiased estimate). Eval mode normalizes with the running buffers.
    """
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    n, c, t = x.data.shape
    m = n * t
    if training:
        if m < 2:
            raise NumericError("batchnorm train mode needs n*t >= 2 for a defined variance")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise NumericError("non-finite batch statistics in batchnorm1d")
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None]) * inv_std[:, None]
    out = gamma.data[:, None] * xhat + beta.data[:, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2))
        gbeta = g.sum(axis=(0, 2))
        gxhat = g * gamma.data[:, None]
        if training:
            term = (
                gxhat
                - gxhat.mean(axis=(0, 2), keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=(0, 2), keepdims=True)
            )
            gx = term * inv_std[:, None]
        else:
            gx = gxhat * inv_std[:, None]
        return gx, ggamma, gbeta

    return _from_op(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward, "batchnorm1d")


def weighted_softmax_ce(logits, labels, class_weights, reduction: str = "weighted-mean") -> Tensor:
    """Class-weighted softmax cross-entropy over (n, num_classes) logits.

    reduction "weighted-mean" divides by the sum of applied weights,
    "weighted-sum/n" divides by the sample count.
    """
    logits = _coerce(logits)
    z = logits.data
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits passed to cross-entropy")
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(class_weights, dtype=np.float64)
    if z.ndim != 2:
        raise ConfigurationError(f"logits must be 2-d (n, classes), got shape {z.shape}")
    n, n_classes = z.shape
    if weights.shape != (n_classes,):
        raise ConfigurationError(
            f"class_weights must have {n_classes} entries, got {weights.shape}"
        )
    if np.any(weights <= 0.0):
        raise ConfigurationError("class weights must be positive")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= n_classes:
        raise ConfigurationError("labels must be class indices matching the logits rows")
    if reduction not in ("weighted-mean", "weighted-sum/n"):
        raise ConfigurationError(f"unknown reduction '{reduction}'")

    z64 = z.astype(np.float64)
    shifted = z64 - z64.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    w = weights[labels]
    nll = -log_p[np.arange(n), labels]
    denom = w.sum() if reduction == "weighted-mean" else float(n)
    loss = (w * nll).sum() / denom

    def backward(g):
        p = np.exp(log_p)
        p[np.arange(n), labels] -= 1.0
        gl = p * (w / denom)[:, None]
        return (g * gl,)

    return _from_op(np.asarray(loss, dtype=z.dtype), (logits,), backward, "weighted_ce")
