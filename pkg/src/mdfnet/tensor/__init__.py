from .core import (
    DimensionError,
    GraphError,
    NumericError,
    Tensor,
    TensorError,
    as_tensor,
    backward,
    grad_enabled,
    no_grad,
)
from .gradcheck import check_parameters, finite_diff_check
from .ops import (
    add,
    concat,
    conv2d,
    deconv2d,
    embedding_lookup,
    flatten,
    linear,
    log_softmax,
    maxpool2d,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
)
from . import ops
from .optim import SGD, sgd_step

__all__ = [
    "DimensionError", "GraphError", "NumericError", "Tensor", "TensorError", "as_tensor",
    "backward", "grad_enabled", "no_grad", "check_parameters", "finite_diff_check",
    "add", "concat", "conv2d", "deconv2d", "embedding_lookup", "flatten", "linear",
    "log_softmax", "maxpool2d", "mul", "relu", "reshape", "sigmoid", "softmax",
    "SGD", "sgd_step",
]
