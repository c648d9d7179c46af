"""Finite-difference audit of the full joint objective, per component.

The audit runs in float64. By default weight matrices are redrawn from
``N(0, 1/fan_in)`` (``point="unit"``); at the ``N(0, 0.02^2)`` training
initialisation (``point="init"``) projections and the pooled state are so
small that a step of 1e-3 is no longer local. Biases, gains and layer scores
keep their initial values either way.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import ModelConfig
from .model import LarcModel
from .tensor import finite_differences, precision, relative_errors

TOLERANCE = 1e-3


@dataclass
class GradcheckReport:
    worst: dict[str, float]
    normwise: dict[str, float]
    lam: float
    h: float
    sigma_grad_norm: float
    zero_lambda_contrastive_grad: float
    worst_entry: dict[str, tuple[str, int, float]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (
            all(v < TOLERANCE for v in self.worst.values())
            and self.zero_lambda_contrastive_grad == 0.0
            and (self.lam == 0 or self.sigma_grad_norm > 0)
        )

    def lines(self) -> list[str]:
        out = []
        for name, err in self.worst.items():
            where, idx, g = self.worst_entry[name]
            out.append(f"{name:<11} max_rel_err={err:.3e} normwise={self.normwise[name]:.3e} "
                       f"{'ok' if err < TOLERANCE else 'FAIL'}  (worst: {where}[{idx}], grad={g:.3e})")
        out.append(f"sigma_net grad norm at lambda={self.lam}: {self.sigma_grad_norm:.3e}")
        out.append(f"projection+sigma_net grad norm at lambda=0: {self.zero_lambda_contrastive_grad:.3e}")
        out.append("PASS" if self.passed else "FAIL")
        return out


def tiny_config() -> ModelConfig:
    return ModelConfig(num_layers=2, hidden_dim=16, num_heads=2, ffn_dim=32, vocab_size=12,
                       max_seq_len=6, num_classes=3, contrastive_dim=8, head_hidden=16, dropout_rate=0.4)


def tiny_batch(cfg: ModelConfig, rng: np.random.Generator, batch: int = 4):
    ids = rng.integers(3, cfg.vocab_size, size=(batch, cfg.max_seq_len))
    ids[:, 0] = 1
    mask = np.ones_like(ids, dtype=bool)
    mask[1, -2:] = False
    ids[1, -2:] = 0
    y = np.array(([0, 0, 1, 2] * batch)[:batch])
    return ids, mask, y


def _grad_norm(pairs) -> float:
    return float(np.sqrt(sum(np.sum(p.grad**2) for _, p in pairs if p.grad is not None)))


def gradcheck(seed: int = 0, lam: float = 0.15, h: float = 1e-3, point: str = "unit",
              cfg: ModelConfig | None = None) -> GradcheckReport:
    """Compare tape and central-difference gradients for every scalar parameter (dropout off)."""
    if point not in ("unit", "init"):
        raise ValueError(f"unknown audit point {point!r}")
    cfg = cfg or tiny_config()
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        model = LarcModel(cfg, rng)
        ids, mask, y = tiny_batch(cfg, rng)
        if point == "unit":
            for _, p in model.named_parameters():
                if p.ndim == 2:
                    p.data = rng.normal(0.0, 1.0 / np.sqrt(p.shape[1]), size=p.shape)

        def loss_fn():
            return model.loss(ids, mask, y, lam, training=False)[0]

        parts = model.components()
        names = [n for group in parts.values() for n, _ in group]
        params = [p for group in parts.values() for _, p in group]
        tapes, fds = finite_differences(loss_fn, params, h)
        tape, fd = dict(zip(names, tapes)), dict(zip(names, fds))
        errs = {n: relative_errors(tape[n], fd[n]) for n in names}
        sigma = _grad_norm(parts["sigma_net"])

        worst, normwise, where = {}, {}, {}
        for comp, group in parts.items():
            top = max(group, key=lambda np_: errs[np_[0]].max())[0]
            worst[comp] = float(errs[top].max())
            j = int(errs[top].argmax())
            where[comp] = (top, j, float(tape[top].reshape(-1)[j]))
            g = np.concatenate([tape[n].reshape(-1) for n, _ in group])
            f = np.concatenate([fd[n].reshape(-1) for n, _ in group])
            normwise[comp] = float(np.linalg.norm(g - f) / max(np.linalg.norm(g), np.linalg.norm(f), 1e-12))

        for p in params:
            p.zero_grad()
        model.loss(ids, mask, y, 0.0, training=False)[0].backward()
        dead = _grad_norm(parts["projection"] + parts["sigma_net"])
    return GradcheckReport(worst=worst, normwise=normwise, lam=lam, h=h, sigma_grad_norm=sigma,
                           zero_lambda_contrastive_grad=dead, worst_entry=where)
