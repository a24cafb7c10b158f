"""Minimal differentiable-operator substrate for the two detectors.

Tensors are numpy arrays with an explicit gradient slot; layers execute
eagerly and cache what their backward pass needs. There is no general
autodiff: only the handful of operator kinds the detectors use.
"""

from .tensor import Tensor
from .layers import (
    Conv2d,
    Deconv2d,
    Dropout,
    FlattenFreq,
    Linear,
    MaxPoolFreq,
    ReLU,
    Sequential,
    Sigmoid,
    SoftmaxClasses,
    forward_backward,
    layer_from_spec,
)
from .optim import Adam, adam_step
from .gradcheck import numeric_gradient, relative_error, check_layer_gradients
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Tensor",
    "Conv2d",
    "Deconv2d",
    "Dropout",
    "FlattenFreq",
    "Linear",
    "MaxPoolFreq",
    "ReLU",
    "Sequential",
    "Sigmoid",
    "SoftmaxClasses",
    "forward_backward",
    "layer_from_spec",
    "Adam",
    "adam_step",
    "numeric_gradient",
    "relative_error",
    "check_layer_gradients",
    "save_checkpoint",
    "load_checkpoint",
]
