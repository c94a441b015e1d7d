from src.neural.checkpoint import load_tensors, save_tensors
from src.neural.gradcheck import grad_check
from src.neural.optim import AdamState, adam_step
from src.neural.tensor import (
    Tape,
    Tensor,
    add,
    add_broadcast,
    backward,
    batch_matmul,
    concat,
    matmul,
    max_over_points,
    mul_broadcast,
    reduce_sum,
    relu,
    reshape,
    scale,
    softmax,
    softmax_cross_entropy,
    square,
    transpose,
)

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "add_broadcast",
    "backward",
    "batch_matmul",
    "concat",
    "grad_check",
    "load_tensors",
    "matmul",
    "max_over_points",
    "mul_broadcast",
    "reduce_sum",
    "relu",
    "reshape",
    "save_tensors",
    "scale",
    "softmax",
    "softmax_cross_entropy",
    "square",
    "transpose",
]
