"""Dense tensors with reverse-mode automatic differentiation.

The engine is numpy-backed and tape-based: every traced operation records
its inputs and a backward closure on the output tensor, and `backward`
replays the tape in reverse topological order. Float32 is the working
precision; float64 is available for verification runs.
"""

from .tensor import (
    DebugMode,
    GradientError,
    NonFiniteError,
    ShapeMismatchError,
    TapeFreedError,
    Tensor,
    backward,
    is_grad_enabled,
    no_grad,
    set_debug,
    stop_gradient,
    tensor,
)
from . import ops
from .ops import PRIMITIVE_OPS, l2_normalize, primitive_forward
from .jacobi import JacobiConvergenceError, gram_eigenvalues

__all__ = [
    "DebugMode",
    "GradientError",
    "JacobiConvergenceError",
    "NonFiniteError",
    "PRIMITIVE_OPS",
    "ShapeMismatchError",
    "TapeFreedError",
    "Tensor",
    "backward",
    "gram_eigenvalues",
    "is_grad_enabled",
    "l2_normalize",
    "no_grad",
    "ops",
    "primitive_forward",
    "set_debug",
    "stop_gradient",
    "tensor",
]
