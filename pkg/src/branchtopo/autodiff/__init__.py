from .gradcheck import GradcheckResult, gradcheck
from .optim import AdamState, adam_step
from .serialize import load_weights, save_weights
from .tensor import (
    Tensor, add, backward, batchnorm, concat, div, gather_rows, hinge, log_softmax,
    matmul, max_axis, mean, mul, no_grad, norm, record_kinks, relu, reshape,
    segment_mean, softmax, sqrt, square, sub, sum_,
)

__all__ = [
    "AdamState", "GradcheckResult", "Tensor", "adam_step", "add", "backward", "batchnorm",
    "concat", "div", "gather_rows", "gradcheck", "hinge", "load_weights", "log_softmax",
    "matmul", "max_axis", "mean", "mul", "no_grad", "norm", "record_kinks", "relu",
    "reshape", "save_weights", "segment_mean", "softmax", "sqrt", "square", "sub", "sum_",
]
