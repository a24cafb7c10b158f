"""Finite-difference verification of layer gradients.

Checks run in float64 with central differences; training itself stays in
float32. The objective is a random linear functional of the layer output,
L(x) = sum(forward(x) * r), whose output gradient is simply r.
"""

from __future__ import annotations

import numpy as np

from .layers import Dropout, Layer


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar f at x, perturbing x in place."""
    if not x.flags.c_contiguous:
        raise ValueError("numeric_gradient needs a contiguous array")
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative disagreement between two gradients."""
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def check_layer_gradients(layer: Layer, x: np.ndarray,
                          rng: np.random.Generator, eps: float = 1e-4,
                          train: bool = False) -> dict[str, float]:
    """Compare analytic gradients against finite differences.

    Returns {"input": err, "param0:...": err, ...}. For Dropout the random
    mask is frozen so every finite-difference evaluation sees the same
    function.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if isinstance(layer, Dropout):
        layer.fixed_mask = rng.random(x.shape) >= layer.p
        train = True
    r = rng.standard_normal(layer.forward(x, train=train).shape)

    def objective(_arr):
        # _arr is perturbed in place by numeric_gradient; the layer reads
        # whichever array (input or parameter) is being probed.
        return float((layer.forward(x, train=train) * r).sum())

    layer.zero_grad()
    layer.forward(x, train=train)
    dx = layer.backward(r.copy())

    errors = {"input": relative_error(dx, numeric_gradient(objective, x, eps))}
    for pi, p in enumerate(layer.params()):
        errors[f"param{pi}:{p.name}"] = relative_error(
            p.grad, numeric_gradient(objective, p.data, eps)
        )
    if isinstance(layer, Dropout):
        layer.fixed_mask = None
    return errors
