"""Minimal differentiable-compute substrate."""
from .autograd import Parameter, Tensor, no_grad
from .gradcheck import grad_check, grad_check_params
from .layers import (MLP, InstanceNorm, Linear, Module, MultiHeadAttention, clip_scores,
                     masked_softmax, mha_forward, mlp_forward, multi_head_attention)
from .optim import AdamState, NonFiniteGradientError, adam_step

__all__ = [
    "Parameter", "Tensor", "no_grad", "grad_check", "grad_check_params", "MLP",
    "InstanceNorm", "Linear", "Module", "MultiHeadAttention", "clip_scores", "masked_softmax",
    "mha_forward", "mlp_forward", "multi_head_attention", "AdamState",
    "NonFiniteGradientError", "adam_step",
]
