"""Self-contained differentiable computation core: tensors, ops, optimizer, grad checker."""

from .gradcheck import GradReport, grad_check
from .ops import MASK_FILL, attention, entropy, gram_schmidt, self_attention
from .optim import ParamSet, clip_grad_norm, optimizer_step
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    linear,
    no_grad,
    softmax,
    stack,
    uniform_init,
)

__all__ = [
    "GradReport",
    "MASK_FILL",
    "ParamSet",
    "Tensor",
    "as_tensor",
    "attention",
    "clip_grad_norm",
    "concat",
    "entropy",
    "grad_check",
    "gram_schmidt",
    "linear",
    "no_grad",
    "optimizer_step",
    "self_attention",
    "softmax",
    "stack",
    "uniform_init",
]
