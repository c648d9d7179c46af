"""The full network: encoder, layer fusion and the two concurrent heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .classifier import ClassifierHead, LossBreakdown, classify, cross_entropy, joint_loss
from .contrastive import AdaptiveTemperature, ProjectionHead, has_positive_pairs, project, supcon_loss
from .encoder import Encoder, LayerStack, ModelConfig
from .fusion import LayerAttention
from .nn import Module
from .tensor import Tensor

BACKBONE = "backbone"
NEW = "new"


@dataclass
class ForwardOutput:
    stack: LayerStack
    z: Tensor
    logits: Tensor
    c: Tensor | None = None
    tau: Tensor | None = None


class LarcModel(Module):
    def __init__(
        self,
        cfg: ModelConfig,
        rng: np.random.Generator,
        enable_fusion: bool = True,
        enable_contrastive: bool = True,
        tau_base: float = 0.05,
        beta: float = 0.1,
    ):
        cfg.validate()
        self.cfg = cfg
        self.enable_fusion = enable_fusion
        self.enable_contrastive = enable_contrastive
        d = cfg.hidden_dim
        self.encoder = Encoder(cfg, rng)
        self.fusion = LayerAttention(cfg.num_layers + 1, d)
        self.projection = ProjectionHead(d, cfg.head_hidden, cfg.contrastive_dim, rng)
        self.temperature = AdaptiveTemperature(d, rng, tau_base=tau_base, beta=beta)
        self.classifier = ClassifierHead(d, cfg.head_hidden, cfg.num_classes, rng, cfg.dropout_rate)

    # -- parameter bookkeeping -----------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)

    def param_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        """Encoder weights form the backbone group; the pooler and all heads are new."""
        groups: dict[str, list[tuple[str, Tensor]]] = {BACKBONE: [], NEW: []}
        for name, p in self.named_parameters():
            backbone = name.startswith("encoder.") and not name.startswith("encoder.pooler.")
            groups[BACKBONE if backbone else NEW].append((name, p))
        return groups

    def components(self) -> dict[str, list[tuple[str, Tensor]]]:
        """Parameters keyed by component, for per-part audits."""
        parts: dict[str, list[tuple[str, Tensor]]] = {}
        for name, p in self.named_parameters():
            head, rest = name.split(".", 1)
            if head == "encoder" and rest.startswith("pooler."):
                head = "pooler"
            elif head == "temperature":
                head = "sigma_net"
            parts.setdefault(head, []).append((name, p))
        return parts

    # -- forward --------------------------------------------------------
    def fused(self, stack: LayerStack) -> Tensor:
        if self.enable_fusion:
            return self.fusion(stack)
        return stack.last

    def forward(self, ids, mask, training: bool = False, rng=None, with_projection: bool = True) -> ForwardOutput:
        stack = self.encoder.encode(ids, mask)
        z = self.fused(stack)
        logits = classify(z, self.classifier, training, rng)
        out = ForwardOutput(stack=stack, z=z, logits=logits)
        if with_projection:
            out.c = project(z, self.projection)
            out.tau = self.temperature(z)
        return out

    def loss(self, ids, mask, y, lam: float, training: bool = False, rng=None) -> tuple[Tensor, LossBreakdown]:
        """Joint objective for one batch.

        With the contrastive arm disabled the weight is forced to 0 and the
        contrastive value is reported but kept off the tape.
        """
        y = np.asarray(y)
        out = self.forward(ids, mask, training, rng, with_projection=True)
        ce = cross_entropy(out.logits, y)
        degenerate = not has_positive_pairs(y) if len(y) >= 2 else True
        if len(y) >= 2:
            con = supcon_loss(out.c, y, out.tau)
        else:
            con = Tensor(0.0)
        if self.enable_contrastive:
            total = ce + con * lam
        else:
            lam = 0.0
            total = ce
        T.check_finite(total, "loss")
        breakdown = joint_loss(ce.item(), con.item(), lam)
        breakdown.degenerate = degenerate
        return total, breakdown

    def predict_logits(self, ids, mask, batch_size: int = 64) -> np.ndarray:
        rows = [
            self.forward(ids[i:i + batch_size], mask[i:i + batch_size], with_projection=False).logits.data
            for i in range(0, len(ids), batch_size)
        ]
        return np.concatenate(rows, axis=0)

    def embed(self, ids, mask, space: str = "fused", batch_size: int = 64) -> np.ndarray:
        if space not in ("fused", "contrastive"):
            raise ValueError(f"unknown space {space!r}")
        rows = []
        for i in range(0, len(ids), batch_size):
            out = self.forward(ids[i:i + batch_size], mask[i:i + batch_size], with_projection=space == "contrastive")
            rows.append((out.z if space == "fused" else out.c).data)
        return np.concatenate(rows, axis=0)
