"""Miniature pre-norm transformer encoder exposing every layer's [CLS] state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .nn import Module, normal, ones, zeros
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_layers: int = 4
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    vocab_size: int = 1000
    max_seq_len: int = 32
    num_classes: int = 5
    contrastive_dim: int = 32
    head_hidden: int = 64
    dropout_rate: float = 0.4
    pooler: str = "tanh"

    def validate(self) -> "ModelConfig":
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ConfigError("hidden_dim must be divisible by num_heads")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.contrastive_dim < 2:
            raise ConfigError("contrastive_dim must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.pooler not in ("tanh", "identity"):
            raise ConfigError(f"unknown pooler {self.pooler!r}")
        if self.max_seq_len < 2:
            raise ConfigError("max_seq_len must be >= 2")
        return self

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = dict(
            num_layers=24, hidden_dim=1024, num_heads=16, ffn_dim=4096, max_seq_len=256,
            contrastive_dim=256, head_hidden=512, dropout_rate=0.4, vocab_size=50265,
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class LayerStack:
    """Per-layer [CLS] vectors, shape ``(L + 1, B, d)``.

    Entries ``0..L-1`` come from the transformer blocks, the last entry is the
    pooled output.
    """

    states: Tensor

    @property
    def num_entries(self) -> int:
        return self.states.shape[0]

    @property
    def last(self) -> Tensor:
        return self.states[-1]

    def __len__(self) -> int:
        return self.num_entries


class Block(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d, f = cfg.hidden_dim, cfg.ffn_dim
        self.ln1_gain, self.ln1_bias = ones(d), zeros(d)
        self.w_qkv, self.b_qkv = normal(rng, (3 * d, d)), zeros(3 * d)
        self.w_out, self.b_out = normal(rng, (d, d)), zeros(d)
        self.ln2_gain, self.ln2_bias = ones(d), zeros(d)
        self.w_ff1, self.b_ff1 = normal(rng, (f, d)), zeros(f)
        self.w_ff2, self.b_ff2 = normal(rng, (d, f)), zeros(d)
        self.num_heads = cfg.num_heads

    def __call__(self, x: Tensor, key_mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        b, t, d = x.shape
        h, dh = self.num_heads, d // self.num_heads
        qkv = T.linear(T.layer_norm(x, self.ln1_gain, self.ln1_bias), self.w_qkv, self.b_qkv)
        qkv = qkv.reshape(b, t, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        probs = T.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
        ctx = T.matmul(probs, v).transpose(0, 2, 1, 3).reshape(b, t, d)
        x = x + T.linear(ctx, self.w_out, self.b_out)
        ff = T.gelu(T.linear(T.layer_norm(x, self.ln2_gain, self.ln2_bias), self.w_ff1, self.b_ff1))
        x = x + T.linear(ff, self.w_ff2, self.b_ff2)
        return x, probs.data


class Pooler(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.kind = cfg.pooler
        if self.kind == "tanh":
            self.weight = normal(rng, (cfg.hidden_dim, cfg.hidden_dim))
            self.bias = zeros(cfg.hidden_dim)

    def __call__(self, cls_vec: Tensor) -> Tensor:
        if self.kind == "identity":
            return cls_vec
        return T.tanh(T.linear(cls_vec, self.weight, self.bias))


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.tok_emb = normal(rng, (cfg.vocab_size, cfg.hidden_dim))
        self.pos_emb = normal(rng, (cfg.max_seq_len, cfg.hidden_dim))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.num_layers)]
        self.pooler = Pooler(cfg, rng)
        self.last_attention: list[np.ndarray] = []

    def encode(self, ids: np.ndarray, mask: np.ndarray | None = None) -> LayerStack:
        """Run the blocks and collect the position-0 vector after each one.

        ``mask`` marks real tokens with True; padded keys receive no attention.
        """
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise DataError(f"expected a (batch, seq) id array, got shape {ids.shape}")
        if ids.shape[1] > self.cfg.max_seq_len:
            raise DataError(f"sequence length {ids.shape[1]} exceeds max_seq_len {self.cfg.max_seq_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise DataError("token id out of vocabulary range")
        if mask is None:
            mask = np.ones(ids.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        t = ids.shape[1]
        x = T.embedding(self.tok_emb, ids) + self.pos_emb[0:t]
        cls_states = []
        self.last_attention = []
        for block in self.blocks:
            x, probs = block(x, mask)
            self.last_attention.append(probs)
            cls_states.append(x[:, 0, :])
        cls_states.append(self.pooler(cls_states[-1]))
        return LayerStack(T.stack(cls_states, axis=0))
