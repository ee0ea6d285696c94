from .layers import BatchNorm2d, Conv2d, Module
from .ops import ShapeError
from .optim import Adam, AdamState, ReduceLROnPlateau, adam_step, reduce_lr_on_plateau
from .tensor import Tensor, is_grad_enabled, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm2d",
    "Conv2d",
    "Module",
    "ReduceLROnPlateau",
    "ShapeError",
    "Tensor",
    "adam_step",
    "is_grad_enabled",
    "no_grad",
    "reduce_lr_on_plateau",
]
