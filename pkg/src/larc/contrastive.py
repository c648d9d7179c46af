"""Projection head, adaptive temperature, supervised contrastive loss and its ramp."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, normal, zeros
from .tensor import Tensor

COS_EPS = 1e-8
# keeps the squashed difficulty strictly inside (0, 1) even when the logistic saturates
_SQUASH_EPS = 1e-6


class ProjectionHead(Module):
    def __init__(self, dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.w1, self.b1 = normal(rng, (hidden, dim)), zeros(hidden)
        self.w2, self.b2 = normal(rng, (out_dim, hidden)), zeros(out_dim)

    def __call__(self, z: Tensor) -> Tensor:
        return project(z, self)


def project(z: Tensor, head: ProjectionHead) -> Tensor:
    """``W2 @ gelu(W1 @ z + b1) + b2``; no normalisation."""
    return T.linear(T.gelu(T.linear(z, head.w1, head.b1)), head.w2, head.b2)


class AdaptiveTemperature(Module):
    """Per-sample temperature ``tau_base * (1 + beta * sigma(z))``.

    ``sigma`` is one affine score followed by a logistic squash, so every
    temperature lands in ``(tau_base, tau_base * (1 + beta))``.
    """

    def __init__(self, dim: int, rng: np.random.Generator, tau_base: float = 0.05, beta: float = 0.1):
        self.tau_base = tau_base
        self.beta = beta
        self.weight = normal(rng, (1, dim))
        self.bias = zeros(1)

    def difficulty(self, z: Tensor) -> Tensor:
        s = T.sigmoid(T.linear(z, self.weight, self.bias).reshape(-1))
        return s * (1.0 - 2.0 * _SQUASH_EPS) + _SQUASH_EPS

    def __call__(self, z: Tensor) -> Tensor:
        return adaptive_tau(z, self)


def adaptive_tau(z: Tensor, at: AdaptiveTemperature) -> Tensor:
    return (at.difficulty(z) * at.beta + 1.0) * at.tau_base


def cosine_sim(u, v, eps: float = COS_EPS) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(u @ v / (max(np.linalg.norm(u), eps) * max(np.linalg.norm(v), eps)))


def cosine_matrix(c: Tensor, eps: float = COS_EPS) -> Tensor:
    """Pairwise cosine similarities of the rows of ``c``."""
    unit = c / T.maximum(T.l2_norm(c, axis=-1), eps).reshape(-1, 1)
    return T.matmul(unit, unit.T)


def positive_mask(y) -> np.ndarray:
    y = np.asarray(y)
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    return same


def has_positive_pairs(y) -> bool:
    return bool(positive_mask(y).any())


def supcon_loss(c: Tensor, y, tau: Tensor) -> Tensor:
    """Supervised contrastive loss with one temperature per anchor.

    Anchors without a positive are left out of the average. A batch where no
    anchor has a positive yields 0 (see :func:`has_positive_pairs`).
    """
    y = np.asarray(y)
    b = y.shape[0]
    if b < 2:
        raise ValueError("supcon_loss needs at least two samples")
    if c.shape[0] != b or tau.shape != (b,):
        raise ValueError("projections, labels and temperatures disagree on batch size")
    pos = positive_mask(y)
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0
    if not valid.any():
        return T.tsum(c) * 0.0
    logits = cosine_matrix(c) / tau.reshape(-1, 1)
    others = ~np.eye(b, dtype=bool)
    log_denom = T.logsumexp(logits, axis=1, mask=others)
    log_prob = logits - log_denom.reshape(-1, 1)
    weights = np.where(valid, 1.0 / np.maximum(n_pos, 1), 0.0)[:, None] * pos
    per_anchor = T.tsum(log_prob * weights.astype(c.data.dtype), axis=1)
    return T.tsum(per_anchor) * (-1.0 / float(valid.sum()))


@dataclass
class ContrastiveSchedule:
    lambda_max: float = 0.15
    t_ramp: float = 5.0

    def __call__(self, t: float) -> float:
        return schedule_lambda(t, self)


def schedule_lambda(t: float, sch: ContrastiveSchedule) -> float:
    if t < 0:
        raise ValueError("epoch must be non-negative")
    if sch.t_ramp <= 0:
        return sch.lambda_max
    return sch.lambda_max * min(1.0, t / sch.t_ramp)
