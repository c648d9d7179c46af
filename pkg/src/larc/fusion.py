"""Layer-attentive residual aggregation over the per-layer [CLS] stack."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import LayerStack
from .nn import Module, ones, zeros
from .tensor import Tensor


def attention_weights(w: Tensor) -> Tensor:
    """Softmax of the raw layer scores; a point on the simplex."""
    return T.softmax(w, axis=-1)


def fuse(stack: LayerStack, alpha: Tensor) -> Tensor:
    """Convex combination ``sum_l alpha_l * h^l`` -> ``(B, d)``."""
    states = stack.states
    if alpha.shape != (states.shape[0],):
        raise ValueError(f"{alpha.shape[0] if alpha.ndim else 0} weights for {states.shape[0]} layers")
    return T.tsum(states * alpha.reshape(-1, *([1] * (states.ndim - 1))), axis=0)


def residual_enhance(z_fused: Tensor, h_last: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    if z_fused.shape[-1] != h_last.shape[-1]:
        raise ValueError("residual branch dimension mismatch")
    return z_fused + T.layer_norm(h_last, gain, bias)


class LayerAttention(Module):
    """Learnable per-layer scores plus the residual LayerNorm.

    Scores start at zero, so the initial mixture is exactly uniform.
    """

    def __init__(self, num_entries: int, dim: int):
        self.w = zeros(num_entries)
        self.ln_gain = ones(dim)
        self.ln_bias = zeros(dim)

    def alpha(self) -> np.ndarray:
        return attention_weights(Tensor(self.w.data)).data

    def __call__(self, stack: LayerStack) -> Tensor:
        z_fused = fuse(stack, attention_weights(self.w))
        return residual_enhance(z_fused, stack.last, self.ln_gain, self.ln_bias)
