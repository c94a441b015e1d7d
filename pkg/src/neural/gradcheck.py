import logging
from typing import Callable, Dict, Union

import numpy as np

from src.neural.tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)

Point = Union[np.ndarray, Dict[str, np.ndarray]]


def _evaluate(function: Callable, point: Dict[str, np.ndarray], single: bool):
    tape = Tape(np.float64)
    tensors = {name: tape.variable(value, name) for name, value in point.items()}
    loss = function(tape, tensors["x"] if single else tensors)
    return tape, loss


def grad_check(function: Callable[[Tape, Union[Tensor, Dict[str, Tensor]]], Tensor],
               point: Point, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``function(tape, x)`` builds a scalar loss on the given tape, where ``x`` is a
    tensor (array point) or a dict of tensors (dict point). Kinks are not masked.
    """
    if h <= 0:
        raise ValueError(f"Step h must be positive, got {h}")
    single = not isinstance(point, dict)
    point = {"x": np.array(point, dtype=np.float64)} if single else {
        name: np.array(value, dtype=np.float64) for name, value in point.items()
    }

    tape, loss = _evaluate(function, point, single)
    analytic = backward(tape, loss)

    worst = 0.0
    for name in sorted(point):
        base = point[name]
        flat = base.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = float(_evaluate(function, point, single)[1].value)
            flat[i] = original - h
            minus = float(_evaluate(function, point, single)[1].value)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            error = abs(grad[i] - numeric) / max(1.0, abs(grad[i]))
            worst = max(worst, error)
    logger.debug(f"Gradient check over {sum(v.size for v in point.values())} coordinates: {worst:.3e}")
    return worst
