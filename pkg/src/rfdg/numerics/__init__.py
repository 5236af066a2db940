"""Minimal differentiable-tensor core: ops, reverse-mode gradients, Adam."""
from . import ops
from .gradcheck import finite_diff_check, finite_diff_errors
from .optim import AdamState, adam_step
from .tensor import (
    Parameter,
    Tensor,
    absolute,
    as_dtype,
    concat,
    dtype_name,
    exp,
    grad,
    log,
    matmul,
    mean,
    power,
    reshape,
    stack,
    take,
    transpose,
    tsum,
)

__all__ = [
    "AdamState", "Parameter", "Tensor", "absolute", "adam_step", "as_dtype", "concat",
    "dtype_name", "exp", "finite_diff_check", "finite_diff_errors", "grad", "log",
    "matmul", "mean", "ops", "power", "reshape", "stack", "take", "transpose", "tsum",
]
