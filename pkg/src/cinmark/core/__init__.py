"""Minimal numpy tensor engine: taped ops, layers, Adam, gradient oracle."""

from . import functional
from .functional import ShapeError
from .gradcheck import GradCheckReport, gradcheck
from .module import Conv2d, ConvTranspose2d, Linear, Module
from .optim import Adam, AdamState, NonFiniteGradient, adam_step
from .tensor import GraphError, Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Adam", "AdamState", "Conv2d", "ConvTranspose2d", "GradCheckReport", "GraphError", "Linear",
    "Module", "NonFiniteGradient", "ShapeError", "Tensor", "adam_step", "as_tensor", "backward",
    "functional", "gradcheck", "is_grad_enabled", "no_grad",
]
