"""Numerical substrate: tensors with reverse-mode autodiff, layers, optimizers."""

from .functional import (
    InfiniteKLError,
    dropout,
    embedding,
    gather_rows,
    gumbel_softmax,
    kl_categorical,
    log_softmax,
    one_hot,
    sample_gumbel,
    scatter_probs,
    softmax,
)
from .gradcheck import finite_diff_check, relative_error
from .optim import (
    MissingGradientError,
    OptimizerState,
    ParamSet,
    ShapeMismatchError,
    adam_step,
    make_adam,
    make_sgd,
    optimizer_step,
    sgd_step,
)
from .engine import GraphError, Tensor, backward, constant, no_grad, parameter, tensor

__all__ = [
    "GraphError",
    "InfiniteKLError",
    "MissingGradientError",
    "OptimizerState",
    "ParamSet",
    "ShapeMismatchError",
    "Tensor",
    "adam_step",
    "backward",
    "constant",
    "dropout",
    "embedding",
    "finite_diff_check",
    "gather_rows",
    "gumbel_softmax",
    "kl_categorical",
    "log_softmax",
    "make_adam",
    "make_sgd",
    "no_grad",
    "one_hot",
    "optimizer_step",
    "parameter",
    "relative_error",
    "sample_gumbel",
    "scatter_probs",
    "sgd_step",
    "softmax",
    "tensor",
]
