"""
Adam optimizer over named parameters
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from backend.tensor import Parameter
from config.settings import DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE
from utils.errors import UninitializedGradientError


@dataclass
class AdamState:
    """Moment buffers and hyperparameters of one Adam optimizer"""
    lr: float = DEFAULT_LEARNING_RATE
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def reset(self) -> None:
        """Forget the moments, keeping the hyperparameters"""
        self.step = 0
        self.m.clear()
        self.v.clear()


def adam_step(params: Iterable[Parameter], state: AdamState, lr: Optional[float] = None) -> AdamState:
    """
    Apply one bias-corrected Adam update in place

    Gradients are left untouched; zeroing them is the caller's job.

    Args:
        params: Parameters with populated gradients
        state: Optimizer state, updated in place
        lr: Learning rate override for this step (warmup)

    Returns:
        The updated state
    """
    params = list(params)
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise UninitializedGradientError(f"no gradient for parameter(s): {', '.join(missing)}")

    state.step += 1
    lr = state.lr if lr is None else lr
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param in params:
        grad = param.grad
        m = state.m.get(param.name)
        v = state.v.get(param.name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        param.data -= update.astype(param.dtype, copy=False)
        state.m[param.name] = m
        state.v[param.name] = v
    return state
