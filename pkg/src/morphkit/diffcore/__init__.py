from . import tensor as ops
from .optim import ADAM_DEFAULTS, ParamStore, adam_step, kaiming_uniform, philox
from .serialize import CheckpointError, VersionMismatchError, load_tensors, save_tensors
from .tensor import (
    GraphConsumedError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat_cols,
    div,
    frobenius_sq,
    gather_cols,
    gather_rows,
    l2_normalize_rows,
    leaky_relu,
    matmul,
    mean,
    mul,
    rotate_rows,
    scatter_mean_rows,
    softmax_rows,
    sub,
    transpose,
)

__all__ = [
    "ADAM_DEFAULTS", "CheckpointError", "GraphConsumedError", "ParamStore", "Tensor",
    "VersionMismatchError", "adam_step", "add", "as_tensor", "backward", "concat_cols", "div",
    "frobenius_sq", "gather_cols", "gather_rows", "kaiming_uniform", "l2_normalize_rows",
    "leaky_relu", "load_tensors", "matmul", "mean", "mul", "ops", "philox", "rotate_rows",
    "save_tensors", "scatter_mean_rows", "softmax_rows", "sub", "transpose",
]
