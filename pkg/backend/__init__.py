"""
Tensor backend package: autodiff primitives, losses, Adam and random streams
"""

from .tensor import (
    Tensor, Parameter, apply_primitive, backward, no_grad, default_dtype,
    get_default_dtype, gradient_check, registered_primitives, as_tensor,
)
from .losses import cross_entropy
from .optim import AdamState, adam_step
from .rng import RngStreams
