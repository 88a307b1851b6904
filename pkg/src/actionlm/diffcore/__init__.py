"""Minimal reverse-mode differentiation over float64 numpy arrays."""

from . import functional
from .gradcheck import NonFiniteError, grad_check
from .nn import Conv1d, Embedding, LayerNorm, Linear, Module, Parameter
from .optim import AdamW
from .rng import make_rng
from .tensor import ContractViolation, Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "AdamW",
    "ContractViolation",
    "Conv1d",
    "Embedding",
    "LayerNorm",
    "Linear",
    "Module",
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "as_tensor",
    "backward",
    "functional",
    "grad_check",
    "is_grad_enabled",
    "make_rng",
    "no_grad",
]
