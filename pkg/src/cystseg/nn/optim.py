"""Adam optimizer over Parameter lists."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .layers import Parameter


class Adam:
    """theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).

    Bias correction uses the step count incremented before the update;
    epsilon sits outside the square root.
    """

    def __init__(self, params: list[Parameter], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1_corr = 1.0 - self.beta1 ** self.t
        b2_corr = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / b1_corr
            v_hat = v / b2_corr
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
