"""Layer containers: parameter registration, seeded init, forward logic.

Weight matrices are drawn uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)];
biases start at zero except the LSTM forget gate, which starts at 1.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .tensor import Parameter, Tensor, scale, slice_axis, stack

def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Module:
    """Minimal container tracking parameters and submodules in insertion order."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._modules: dict[str, Module] = {}

    def add_param(self, name: str, data: np.ndarray) -> Parameter:
        p = Parameter(data, name=name)
        self._params[name] = p
        return p

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name if prefix else name), p
        for mod_name, module in self._modules.items():
            sub_prefix = f"{prefix}{mod_name}." if prefix else f"{mod_name}."
            yield from module.named_parameters(sub_prefix)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def finalize_names(self):
        """Stamp every parameter with its full dotted path (unique per model)."""
        for path, p in self.named_parameters():
            p.name = path
        return self

    def set_dtype(self, dtype):
        """Cast parameters (and buffers) in place; float64 enables precise gradient checks."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for module in self._modules.values():
            module.set_dtype(dtype)
        return self


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = self.add_param("weight", _uniform(rng, (out_dim, in_dim), in_dim))
        self.bias = self.add_param("bias", np.zeros(out_dim, dtype=np.float32))

    def __call__(self, x) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        if kernel % 2 != 1:
            raise ConfigurationError(f"conv kernel must be odd for length preservation, got {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.padding = (kernel - 1) // 2
        self.weight = self.add_param(
            "weight", _uniform(rng, (out_channels, in_channels, kernel), in_channels * kernel)
        )
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=np.float32))

    def __call__(self, x) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=np.float32))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x, training: bool) -> Tensor:
        return F.batchnorm1d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training,
            momentum=self.momentum,
            eps=self.eps,
        )

    def set_dtype(self, dtype):
        super().set_dtype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self


class LSTM(Module):
    """Single unidirectional LSTM layer, gate order (input, forget, cell, output)."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.w_ih = self.add_param("w_ih", _uniform(rng, (4 * hidden_dim, in_dim), in_dim))
        self.w_hh = self.add_param("w_hh", _uniform(rng, (4 * hidden_dim, hidden_dim), hidden_dim))
        bias = np.zeros(4 * hidden_dim, dtype=np.float32)
        bias[hidden_dim : 2 * hidden_dim] = 1.0  # forget gate open at init
        self.bias = self.add_param("bias", bias)

    def step(self, x_t, h, c):
        hd = self.hidden_dim
        z = F.linear(x_t, self.w_ih, self.bias) + F.linear(h, self.w_hh)
        i = F.sigmoid(slice_axis(z, 1, 0, hd))
        f = F.sigmoid(slice_axis(z, 1, hd, 2 * hd))
        g = F.tanh(slice_axis(z, 1, 2 * hd, 3 * hd))
        o = F.sigmoid(slice_axis(z, 1, 3 * hd, 4 * hd))
        c_new = f * c + i * g
        h_new = o * F.tanh(c_new)
        return h_new, c_new

    def __call__(self, x, h0=None, c0=None):
        """x: (n, t, in_dim) -> outputs (n, t, hidden), final (h, c)."""
        n, t, _ = x.shape
        dtype = x.dtype
        h = h0 if h0 is not None else Tensor(np.zeros((n, self.hidden_dim), dtype=dtype))
        c = c0 if c0 is not None else Tensor(np.zeros((n, self.hidden_dim), dtype=dtype))
        outputs = []
        for step in range(t):
            x_t = slice_axis(x, 1, step, step + 1).reshape((n, self.in_dim))
            h, c = self.step(x_t, h, c)
            outputs.append(h)
        return stack(outputs, axis=1), (h, c)


class MHAPool(Module):
    """Attention pooling over time with one learned query vector per head.

    Keys and values come from learned affine maps of each frame; per-head
    scaled dot products against the query give softmax weights over time,
    and the weighted value sums are concatenated back to the input width.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"pooling dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.queries = self.add_param(
            "queries", _uniform(rng, (heads, self.head_dim), self.head_dim)
        )
        self.key = self.add_module("key", Linear(dim, dim, rng))
        self.value = self.add_module("value", Linear(dim, dim, rng))

    def __call__(self, x):
        """x: (n, t, dim) -> pooled (n, dim), attention weights (n, t, heads)."""
        n, t, _ = x.shape
        keys = self.key(x).reshape((n, t, self.heads, self.head_dim))
        logits = (keys * self.queries).sum(axis=3)  # (n, t, heads)
        logits = scale(logits, 1.0 / np.sqrt(self.head_dim))
        attn = F.softmax(logits, axis=1)
        values = self.value(x).reshape((n, t, self.heads, self.head_dim))
        weighted = values * attn.reshape((n, t, self.heads, 1))
        pooled = weighted.sum(axis=1).reshape((n, self.dim))
        return pooled, attn
