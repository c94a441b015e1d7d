"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every op appends its output node to the tape, so creation order is a valid
topological order; ``backward`` walks the tape once in reverse. Ops check their
output for NaN/Inf and raise immediately.
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Array value with a link into the tape that produced it"""
    __slots__ = ("value", "tape", "node_id", "parents", "backward_fn", "name", "op")

    def __init__(self, value: np.ndarray, tape: "Tape", node_id: int,
                 parents: Tuple["Tensor", ...] = (), backward_fn: Optional[BackwardFn] = None,
                 name: Optional[str] = None, op: str = "leaf"):
        self.value = value
        self.tape = tape
        self.node_id = node_id
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, name={self.name})"


class Tape:
    """Ordered record of tensors and their backward rules"""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: List[Tensor] = []
        self.variables: Dict[str, Tensor] = {}

    def _append(self, value, parents=(), backward_fn=None, name=None, op="leaf") -> Tensor:
        tensor = Tensor(value, self, len(self.nodes), tuple(parents), backward_fn, name, op)
        self.nodes.append(tensor)
        return tensor

    def variable(self, value: np.ndarray, name: str) -> Tensor:
        """Tracked parameter; backward reports a gradient for it under ``name``"""
        if name in self.variables:
            raise ValueError(f"Variable {name} already on tape")
        value = np.array(value, dtype=self.dtype)
        _check_finite(value, f"variable {name}")
        tensor = self._append(value, name=name)
        self.variables[name] = tensor
        return tensor

    def constant(self, value: np.ndarray) -> Tensor:
        value = np.asarray(value, dtype=self.dtype)
        _check_finite(value, "constant")
        return self._append(value, op="constant")

    def record(self, value: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
        for parent in parents:
            if parent.tape is not self:
                raise ValueError(f"{op}: operand belongs to a different tape")
        value = np.asarray(value, dtype=self.dtype)
        _check_finite(value, op)
        return self._append(value, parents, backward_fn, op=op)


def _check_finite(value: np.ndarray, op: str):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _shape_error(op: str, a, b):
    return ShapeMismatchError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}", shapes=(tuple(a), tuple(b)))


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss for every variable on the tape; untouched ones are zero"""
    if loss.value.size != 1:
        raise ShapeMismatchError(f"Loss must be scalar, got shape {loss.shape}", shapes=(loss.shape,))
    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        grad = grads.pop(node.node_id, None) if node.name is None else grads.get(node.node_id)
        if grad is None or node.backward_fn is None:
            continue
        for parent, contribution in zip(node.parents, node.backward_fn(grad)):
            if contribution is None:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + contribution
            else:
                grads[parent.node_id] = contribution
    return {
        name: grads.get(tensor.node_id, np.zeros_like(tensor.value))
        for name, tensor in tape.variables.items()
    }


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """x @ w for x of shape (..., m) and a 2-D w of shape (m, p)"""
    if w.value.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise _shape_error("matmul", x.shape, w.shape)
    xv, wv = x.value, w.value

    def rule(g):
        gx = g @ wv.T
        gw = xv.reshape(-1, xv.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return x.tape.record(xv @ wv, (x, w), rule, "matmul")


def batch_matmul(p: Tensor, t: Tensor) -> Tensor:
    """Per-sample product P_b @ T_b for shapes (B, n, k) and (B, k, m)"""
    if p.value.ndim != 3 or t.value.ndim != 3 or p.shape[0] != t.shape[0] or p.shape[2] != t.shape[1]:
        raise _shape_error("batch_matmul", p.shape, t.shape)
    pv, tv = p.value, t.value

    def rule(g):
        return g @ np.swapaxes(tv, 1, 2), np.swapaxes(pv, 1, 2) @ g

    return p.tape.record(pv @ tv, (p, t), rule, "batch_matmul")


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise _shape_error("add", x.shape, y.shape)
    return x.tape.record(x.value + y.value, (x, y), lambda g: (g, g), "add")


def add_broadcast(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast over every leading axis of x"""
    try:
        out = x.value + b.value
    except ValueError:
        raise _shape_error("add_broadcast", x.shape, b.shape)
    if out.shape != x.shape:
        raise _shape_error("add_broadcast", x.shape, b.shape)
    shape = b.shape
    return x.tape.record(out, (x, b), lambda g: (g, _unbroadcast(g, shape)), "add_broadcast")


def mul_broadcast(x: Tensor, s: Tensor) -> Tensor:
    """x * s with s broadcast over every leading axis of x"""
    try:
        out = x.value * s.value
    except ValueError:
        raise _shape_error("mul_broadcast", x.shape, s.shape)
    if out.shape != x.shape:
        raise _shape_error("mul_broadcast", x.shape, s.shape)
    xv, sv = x.value, s.value
    return x.tape.record(out, (x, s), lambda g: (g * sv, _unbroadcast(g * xv, sv.shape)), "mul_broadcast")


def scale(x: Tensor, factor: float) -> Tensor:
    return x.tape.record(x.value * factor, (x,), lambda g: (g * factor,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return x.tape.record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def square(x: Tensor) -> Tensor:
    xv = x.value
    return x.tape.record(xv * xv, (x,), lambda g: (2.0 * xv * g,), "square")


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return x.tape.record(np.sum(x.value), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", original, shape)
    return x.tape.record(out, (x,), lambda g: (g.reshape(original),), "reshape")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes"""
    return x.tape.record(np.swapaxes(x.value, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tape = tensors[0].tape
    values = [t.value for t in tensors]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError:
        raise _shape_error("concat", tensors[0].shape, tensors[-1].shape)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def rule(g):
        return np.split(g, bounds, axis=axis)

    return tape.record(out, tuple(tensors), rule, "concat")


def max_over_points(x: Tensor) -> Tensor:
    """Coordinate-wise max over the point axis (-2); ties route the gradient to the lowest index"""
    if x.value.ndim < 2:
        raise ShapeMismatchError(f"max_over_points needs a point axis, got shape {x.shape}", shapes=(x.shape,))
    xv = x.value
    winners = np.expand_dims(np.argmax(xv, axis=-2), -2)
    out = np.take_along_axis(xv, winners, axis=-2).squeeze(-2)

    def rule(g):
        grad = np.zeros_like(xv)
        np.put_along_axis(grad, winners, np.expand_dims(g, -2), axis=-2)
        return (grad,)

    return x.tape.record(out, (x,), rule, "max_over_points")


def softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - np.max(values, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits) over a (B, C) batch"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    lv = logits.value
    if lv.ndim != 2 or lv.shape[0] != len(labels):
        raise _shape_error("softmax_cross_entropy", lv.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= lv.shape[1]):
        raise ShapeMismatchError(f"Label out of range for {lv.shape[1]} classes")
    batch = len(labels)
    shifted = lv - np.max(lv, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    picked = shifted[np.arange(batch), labels]
    loss = np.mean(log_norm - picked)
    probs = softmax(lv)

    def rule(g):
        grad = probs.copy()
        grad[np.arange(batch), labels] -= 1.0
        return (grad * (g / batch),)

    return logits.tape.record(loss, (logits,), rule, "softmax_cross_entropy")
