"""Bias-corrected Adam over named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .tensor import Parameter


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name plus a shared step count."""

    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    def __init__(self, params: list[Parameter], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ConfigurationError("parameter names must be unique for optimizer state")
        self.params = list(params)
        self.state = AdamState(
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            m={p.name: np.zeros_like(p.data) for p in params},
            v={p.name: np.zeros_like(p.data) for p in params},
        )

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float):
        """One update; parameters with no grad are treated as zero-gradient."""
        st = self.state
        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = st.m[p.name]
            v = st.v[p.name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + st.eps)).astype(p.data.dtype)
