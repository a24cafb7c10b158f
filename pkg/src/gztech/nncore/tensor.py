"""Parameter container: value plus accumulated gradient."""

from __future__ import annotations

import numpy as np


class Tensor:
    """An n-dimensional value with an optional same-shape gradient.

    Gradients accumulate across backward calls until `zero_grad`.
    """

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, dtype=np.float32, name: str = ""):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def accumulate(self, delta: np.ndarray) -> None:
        if delta.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {delta.shape} != parameter shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = delta.astype(self.data.dtype, copy=True)
        else:
            self.grad += delta

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor({self.name or 'param'}, shape={self.data.shape}, dtype={self.data.dtype})"
