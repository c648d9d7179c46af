"""Classification head, cross-entropy and the joint objective."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .errors import DataError
from .nn import Module, normal, zeros
from .tensor import Tensor


class ClassifierHead(Module):
    def __init__(self, dim: int, hidden: int, num_classes: int, rng: np.random.Generator,
                 dropout_rate: float = 0.4):
        self.w3, self.b3 = normal(rng, (hidden, dim)), zeros(hidden)
        self.w4, self.b4 = normal(rng, (num_classes, hidden)), zeros(num_classes)
        self.dropout_rate = dropout_rate

    def __call__(self, z: Tensor, training: bool = False, rng=None) -> Tensor:
        return classify(z, self, training, rng)


def classify(z: Tensor, head: ClassifierHead, training: bool = False, rng=None) -> Tensor:
    """Logits ``W4 @ dropout(gelu(W3 @ z + b3)) + b4``."""
    hidden = T.gelu(T.linear(z, head.w3, head.b3))
    hidden = T.dropout(hidden, head.dropout_rate, training, rng)
    return T.linear(hidden, head.w4, head.b4)


def cross_entropy(logits: Tensor, y) -> Tensor:
    """Mean negative log-likelihood of the integer labels ``y`` (0-based)."""
    y = np.asarray(y, dtype=np.int64)
    n, k = logits.shape
    if y.shape != (n,):
        raise DataError(f"{y.shape[0]} labels for {n} logit rows")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise DataError(f"label out of range for {k} classes")
    onehot = np.zeros((n, k), dtype=logits.data.dtype)
    onehot[np.arange(n), y] = 1.0
    return T.tsum(T.log_softmax(logits, axis=-1) * onehot) * (-1.0 / n)


@dataclass
class LossBreakdown:
    ce: float
    con: float
    lambda_t: float
    total: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def joint_loss(ce: float, con: float, lam: float) -> LossBreakdown:
    return LossBreakdown(ce=float(ce), con=float(con), lambda_t=float(lam), total=float(ce) + float(lam) * float(con))
