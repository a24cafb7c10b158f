"""Adam optimizer."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_step(value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float, beta2: float, eps: float) -> None:
    """Standard Adam update, in place on value/m/v. t is the 1-based step."""
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Holds first/second-moment state per parameter; deterministic given state."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.state = [
            (np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params
        ]

    def step(self) -> None:
        self.t += 1
        for p, (m, v) in zip(self.params, self.state):
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, m, v, self.t, self.lr,
                      self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
