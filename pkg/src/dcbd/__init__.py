"""Differentiable causal block diagrams.

Composable block models with time semantics, assume-guarantee and
residual-based contracts, reverse/forward-mode AD through executions, and
contract-guided gradient optimization.
"""

from . import _kernels
from .tape import (GradStore, Tape, Tensor, Var, backward, check_gradient,
                   jvp)

__version__ = "0.1.0"


def kernel_backend() -> str:
    """Active arithmetic-kernel lane: 'compiled' or 'python'."""
    return _kernels.backend()
