"""Forward-mode automatic differentiation over scalar expressions."""

from ._kernels import BACKEND, HAVE_EXT
from .dual import (
    Dual,
    cos,
    exp,
    log,
    partials_of,
    seed_vector,
    sin,
    sqrt,
    tan,
    tanh,
    value_of,
)
from .ops import (
    VectorFunction,
    batch_jacobian,
    check_fd,
    eval_values,
    gradient,
    jacobian,
)

__all__ = [
    "BACKEND",
    "HAVE_EXT",
    "Dual",
    "VectorFunction",
    "batch_jacobian",
    "check_fd",
    "cos",
    "eval_values",
    "exp",
    "gradient",
    "jacobian",
    "log",
    "partials_of",
    "seed_vector",
    "sin",
    "sqrt",
    "tan",
    "tanh",
    "value_of",
]
