import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.errors import ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moments and step count of the Adam optimizer"""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; parameters are updated in place and returned"""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name in sorted(params):
        param = params[name]
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param)
        if grad.shape != param.shape:
            raise ShapeMismatchError(
                f"Gradient for {name} has shape {grad.shape}, parameter has {param.shape}",
                shapes=(grad.shape, param.shape),
            )
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param)
            v = np.zeros_like(param)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        param -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return params, state
