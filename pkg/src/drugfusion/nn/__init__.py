"""Hand-rolled neural network kernels on numpy arrays.

Every layer implements an exact backward pass; the gradcheck module
verifies them against central finite differences. The training path may
run in float32, while verification runs in float64.
"""

from .layers import (
    Conv1d,
    Dense,
    GruLayer,
    InputTooShort,
    NnError,
    ShapeMismatch,
    dropout_backward,
    dropout_forward,
    global_max_pool,
    global_max_pool_backward,
    glorot_uniform,
    relu,
    relu_backward,
    sigmoid,
)
from .losses import l2_penalty, weighted_bce
from .optim import Adam
from .gradcheck import GradCheckResult, grad_check
from .weights import load_weights, save_weights

__all__ = [
    "NnError",
    "ShapeMismatch",
    "InputTooShort",
    "Dense",
    "Conv1d",
    "GruLayer",
    "glorot_uniform",
    "relu",
    "relu_backward",
    "sigmoid",
    "dropout_forward",
    "dropout_backward",
    "global_max_pool",
    "global_max_pool_backward",
    "weighted_bce",
    "l2_penalty",
    "Adam",
    "grad_check",
    "GradCheckResult",
    "save_weights",
    "load_weights",
]
