from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .core import ShapeError, Tape, Tensor, as_tensor, backward, no_grad, zero_grads
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    abs, concat, conv2d, conv3d, cos, exp, getitem, layer_norm, log, log1p, log_softmax, matmul,
    max_pool, mean, relu, reshape, sigmoid, sin, softmax, sort_with_permutation, sqrt, stack, sum,
    tanh, transpose,
)

__all__ = [
    "CheckpointError", "GradCheckReport", "ShapeError", "Tape", "Tensor", "abs", "as_tensor",
    "backward", "concat", "conv2d", "conv3d", "cos", "exp", "getitem", "grad_check", "layer_norm",
    "load_checkpoint", "log", "log1p", "log_softmax", "matmul", "no_grad", "max_pool", "mean", "ops",
    "relu", "reshape", "save_checkpoint", "sigmoid", "sin", "softmax", "sort_with_permutation", "sqrt",
    "stack", "sum", "tanh", "transpose", "zero_grads",
]
