"""Grouped AdamW with linear warmup/decay, global-norm clipping and accumulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalFailure
from .tensor import Tensor


@dataclass
class OptimizerConfig:
    lr_backbone: float = 2e-6
    lr_new: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_max_norm: float = 1.0
    accum_steps: int = 2
    warmup_fraction: float = 0.10
    total_steps: int = 1

    def validate(self) -> "OptimizerConfig":
        if self.lr_backbone <= 0 or self.lr_new <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if self.accum_steps < 1:
            raise ConfigError("accum_steps must be >= 1")
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        return self

    @property
    def warmup_steps(self) -> int:
        return int(self.warmup_fraction * self.total_steps)


@dataclass
class ParamGroup:
    group_id: str
    params: list[tuple[str, Tensor]]
    base_lr: float


def lr_multiplier(step: int, cfg: OptimizerConfig) -> float:
    if cfg.total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    warm = cfg.warmup_steps
    if step < warm:
        return step / warm
    if cfg.total_steps == warm:
        return 1.0
    return (cfg.total_steps - step) / (cfg.total_steps - warm)


def lr_at(step: int, cfg: OptimizerConfig) -> dict[str, float]:
    m = lr_multiplier(step, cfg)
    return {"backbone": cfg.lr_backbone * m, "new": cfg.lr_new * m}


def global_norm(grads) -> float:
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[float, float]:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns ``(pre_clip_norm, scale)``.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericalFailure(f"non-finite gradient norm {norm}")
    scale = 1.0
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            if g is not None:
                g *= g.dtype.type(scale)
    return norm, scale


def decays(name: str, p: Tensor) -> bool:
    """Weight decay hits matrices only; the layer-attention scores are a vector and are skipped."""
    return p.ndim >= 2


class AdamW:
    def __init__(self, groups: list[ParamGroup], cfg: OptimizerConfig):
        cfg.validate()
        self.groups = groups
        self.cfg = cfg
        self.t = 0
        self.state: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        seen: set[int] = set()
        for g in groups:
            for _, p in g.params:
                if id(p) in seen:
                    raise ConfigError("parameter appears in more than one group")
                seen.add(id(p))

    def parameters(self) -> list[Tensor]:
        return [p for g in self.groups for _, p in g.params]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def step(self, lrs: dict[str, float]) -> None:
        """One decoupled-weight-decay update with per-group learning rate ``lrs[group_id]``."""
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for group in self.groups:
            lr = lrs[group.group_id]
            for name, p in group.params:
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                m, v = self.state.get(id(p), (None, None))
                if m is None:
                    m, v = np.zeros_like(p.data), np.zeros_like(p.data)
                m = b1 * m + (1.0 - b1) * g
                v = b2 * v + (1.0 - b2) * g * g
                self.state[id(p)] = (m, v)
                update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
                if cfg.weight_decay and decays(name, p):
                    update = update + cfg.weight_decay * p.data
                p.data = (p.data - lr * update).astype(p.data.dtype)
