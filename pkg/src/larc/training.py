"""Configuration, the training loop, evaluation and checkpoint plumbing."""
from __future__ import annotations

import contextlib
import csv
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint
from .classifier import LossBreakdown
from .contrastive import ContrastiveSchedule
from .data import EncodedBatch, Example, Vocabulary, encode_examples, read_jsonl
from .encoder import ModelConfig
from .errors import ConfigError, DataError, NumericalFailure
from .metrics import EvalReport, weighted_f1
from .model import BACKBONE, NEW, LarcModel
from .optim import AdamW, OptimizerConfig, ParamGroup, clip_global_norm, lr_at
from .tensor import NumericalError

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "lambda", "ce", "con", "total", "lr_backbone", "lr_new", "grad_norm", "clip_scale")


@dataclass
class TrainingConfig:
    # model
    num_layers: int = 4
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    vocab_size: int | None = None
    max_seq_len: int = 32
    num_classes: int | None = None
    contrastive_dim: int = 32
    head_hidden: int = 64
    dropout_rate: float = 0.4
    pooler: str = "tanh"
    # optimiser
    lr_backbone: float = 2e-6
    lr_new: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_max_norm: float = 1.0
    accum_steps: int = 2
    warmup_fraction: float = 0.10
    # contrastive schedule and temperature
    lambda_max: float = 0.15
    t_ramp: float = 5.0
    ramp_granularity: str = "step"
    tau_base: float = 0.05
    beta: float = 0.1
    # loop
    batch_size: int = 16
    epochs: int = 15
    seed: int = 0
    # data
    train_path: str | None = None
    val_path: str | None = None
    test_path: str | None = None
    vocab_path: str | None = None
    max_vocab: int | None = None
    out_dir: str | None = None
    # ablation arms
    enable_fusion: bool = True
    enable_contrastive: bool = True

    def validate(self) -> "TrainingConfig":
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.ramp_granularity not in ("step", "epoch"):
            raise ConfigError("ramp_granularity must be 'step' or 'epoch'")
        if self.tau_base <= 0 or self.beta < 0:
            raise ConfigError("tau_base must be positive and beta non-negative")
        if not 0 <= self.lambda_max:
            raise ConfigError("lambda_max must be non-negative")
        OptimizerConfig(**self._optimizer_kwargs(total_steps=1)).validate()
        if self.vocab_size is not None and self.num_classes is not None:
            self.model_config().validate()
        return self

    def _optimizer_kwargs(self, total_steps: int) -> dict:
        keys = ("lr_backbone", "lr_new", "beta1", "beta2", "eps", "weight_decay", "clip_max_norm",
                "accum_steps", "warmup_fraction")
        return {k: getattr(self, k) for k in keys} | {"total_steps": total_steps}

    def optimizer_config(self, total_steps: int) -> OptimizerConfig:
        return OptimizerConfig(**self._optimizer_kwargs(total_steps))

    def model_config(self) -> ModelConfig:
        if self.vocab_size is None or self.num_classes is None:
            raise ConfigError("vocab_size and num_classes must be resolved before building the model")
        keys = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: getattr(self, k) for k in keys})

    def schedule(self) -> ContrastiveSchedule:
        return ContrastiveSchedule(self.lambda_max, self.t_ramp)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def from_json(cls, path) -> "TrainingConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)


def thread_count() -> int:
    raw = os.environ.get("LARC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LARC_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("LARC_THREADS must be >= 1")
    return n


@contextlib.contextmanager
def limited_threads():
    with threadpool_limits(limits=thread_count()):
        yield


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for initialisation, dropout and shuffling."""
    children = np.random.SeedSequence(seed).spawn(3)
    return {name: np.random.default_rng(s) for name, s in zip(("init", "dropout", "shuffle"), children)}


def build_model(cfg: TrainingConfig, rng: np.random.Generator | None = None) -> LarcModel:
    rng = rng if rng is not None else rng_streams(cfg.seed)["init"]
    return LarcModel(cfg.model_config(), rng, cfg.enable_fusion, cfg.enable_contrastive,
                     tau_base=cfg.tau_base, beta=cfg.beta)


def make_optimizer(model: LarcModel, opt_cfg: OptimizerConfig) -> AdamW:
    groups = model.param_groups()
    n_all = len(list(model.named_parameters()))
    if len(groups[BACKBONE]) + len(groups[NEW]) != n_all:
        raise ConfigError("parameter groups do not partition the model")
    # switched-off components stay at their initial values (decay would move them)
    frozen = ()
    if not model.enable_fusion:
        frozen += ("fusion.",)
    if not model.enable_contrastive:
        frozen += ("projection.", "temperature.")
    live = [(n, p) for n, p in groups[NEW] if not n.startswith(frozen)]
    return AdamW(
        [ParamGroup("backbone", groups[BACKBONE], opt_cfg.lr_backbone),
         ParamGroup("new", live, opt_cfg.lr_new)],
        opt_cfg,
    )


# -- checkpoints ------------------------------------------------------------
def checkpoint_metadata(cfg: TrainingConfig, vocab: Vocabulary, step: int, epoch: int,
                        rngs: dict[str, np.random.Generator] | None = None, **extra) -> dict:
    meta = {
        "config": cfg.to_dict(),
        "step": step,
        "epoch": epoch,
        "vocab": vocab.tokens,
        "rng": {k: g.bit_generator.state for k, g in (rngs or {}).items()},
    }
    meta.update(extra)
    return meta


def save_model(path, model: LarcModel, meta: dict) -> None:
    checkpoint.save(path, model.state_dict(), meta)


def load_model(path) -> tuple[LarcModel, Vocabulary, TrainingConfig, dict]:
    meta, tensors = checkpoint.load(path)
    try:
        cfg = TrainingConfig.from_dict(meta["config"])
        vocab = Vocabulary(meta["vocab"])
    except KeyError as exc:
        raise ConfigError(f"checkpoint metadata lacks {exc}") from exc
    if len(vocab) != cfg.vocab_size:
        raise ConfigError(f"checkpoint vocabulary ({len(vocab)}) does not match vocab_size {cfg.vocab_size}")
    model = build_model(cfg)
    model.load_state_dict(tensors)
    return model, vocab, cfg, meta


# -- evaluation -------------------------------------------------------------
def check_labels(batch: EncodedBatch, num_classes: int) -> None:
    if len(batch) and (batch.labels.min() < 0 or batch.labels.max() >= num_classes):
        raise DataError(f"labels fall outside the {num_classes} classes the model was trained on")


def predict(model: LarcModel, batch: EncodedBatch) -> np.ndarray:
    return model.predict_logits(batch.ids, batch.mask).argmax(axis=1)


def evaluate_batch(model: LarcModel, batch: EncodedBatch) -> EvalReport:
    check_labels(batch, model.cfg.num_classes)
    return weighted_f1(batch.labels, predict(model, batch), model.cfg.num_classes)


def evaluate(model: LarcModel, vocab: Vocabulary, examples: Sequence[Example]) -> EvalReport:
    if len(vocab) != model.cfg.vocab_size:
        raise ConfigError("vocabulary does not match the model")
    return evaluate_batch(model, encode_examples(examples, vocab, model.cfg.max_seq_len))


# -- training ---------------------------------------------------------------
@dataclass
class TrainResult:
    model: LarcModel
    vocab: Vocabulary
    config: TrainingConfig
    history: list[dict] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)
    best_state: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    best_val_f1: float | None = None
    final_meta: dict | None = None
    best_meta: dict | None = None


def _resolve(cfg: TrainingConfig, train_set, val_set, vocab):
    if not train_set:
        raise DataError("training set is empty")
    if vocab is None:
        vocab = Vocabulary.load(cfg.vocab_path) if cfg.vocab_path else Vocabulary.build(
            (ex.text for ex in train_set), max_size=cfg.max_vocab)
    cfg = TrainingConfig(**cfg.to_dict())
    if cfg.vocab_size is None:
        cfg.vocab_size = len(vocab)
    elif cfg.vocab_size != len(vocab):
        raise ConfigError(f"vocab_size {cfg.vocab_size} disagrees with the vocabulary ({len(vocab)})")
    labels = [ex.label for ex in list(train_set) + list(val_set or [])]
    if cfg.num_classes is None:
        cfg.num_classes = max(max(labels) + 1, 2)
    elif max(labels) >= cfg.num_classes:
        raise DataError(f"label {max(labels)} out of range for {cfg.num_classes} classes")
    return cfg.validate(), vocab


def train(
    cfg: TrainingConfig,
    train_set: Sequence[Example] | None = None,
    val_set: Sequence[Example] | None = None,
    vocab: Vocabulary | None = None,
    out_dir: str | os.PathLike | None = None,
) -> TrainResult:
    """Fit the model.

    Datasets default to the JSONL files named in ``cfg``. When ``out_dir`` (or
    ``cfg.out_dir``) is set, writes ``train_log.csv``, ``val_log.csv``,
    ``vocab.txt``, ``best.larc`` and ``final.larc`` there.
    """
    cfg.validate()
    if train_set is None:
        if not cfg.train_path:
            raise ConfigError("no training data given")
        train_set = read_jsonl(cfg.train_path)
    if val_set is None and cfg.val_path:
        val_set = read_jsonl(cfg.val_path)
    cfg, vocab = _resolve(cfg, train_set, val_set, vocab)
    out = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
    with limited_threads():
        return _train(cfg, train_set, val_set, vocab, out)


def _train(cfg, train_set, val_set, vocab, out) -> TrainResult:
    rngs = rng_streams(cfg.seed)
    model = build_model(cfg, rngs["init"])
    train_b = encode_examples(train_set, vocab, cfg.max_seq_len)
    val_b = encode_examples(val_set, vocab, cfg.max_seq_len) if val_set else None
    if train_b.n_truncated:
        log.info("truncated fraction of training texts: %.3f", train_b.truncated_fraction)
    n = len(train_b)
    micro_per_epoch = math.ceil(n / cfg.batch_size)
    steps_per_epoch = math.ceil(micro_per_epoch / cfg.accum_steps)
    opt_cfg = cfg.optimizer_config(total_steps=cfg.epochs * steps_per_epoch)
    opt = make_optimizer(model, opt_cfg)
    schedule = cfg.schedule()
    result = TrainResult(model=model, vocab=vocab, config=cfg)
    params = opt.parameters()
    log_fh = writer = None
    if out is not None:
        log_fh = (out / "train_log.csv").open("w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(LOG_COLUMNS)
    step = 0
    last_good = model.state_dict()
    try:
        for epoch in range(cfg.epochs):
            order = rngs["shuffle"].permutation(n)
            micro = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
            for w in range(0, len(micro), cfg.accum_steps):
                window = micro[w:w + cfg.accum_steps]
                if cfg.ramp_granularity == "epoch":
                    t = float(epoch)
                else:
                    t = step / steps_per_epoch
                lam = schedule(t) if cfg.enable_contrastive else 0.0
                opt.zero_grad()
                parts: list[LossBreakdown] = []
                try:
                    for idx in window:
                        total, bd = model.loss(train_b.ids[idx], train_b.mask[idx], train_b.labels[idx],
                                               lam, training=True, rng=rngs["dropout"])
                        total.backward()
                        parts.append(bd)
                    inv = 1.0 / len(window)
                    grads = [p.grad for p in params if p.grad is not None]
                    for g in grads:
                        g *= g.dtype.type(inv)
                    norm, scale = clip_global_norm(grads, opt_cfg.clip_max_norm)
                except (NumericalError, NumericalFailure) as exc:
                    if out is not None:
                        model.load_state_dict(last_good)
                        save_model(out / "last_good.larc", model,
                                   checkpoint_metadata(cfg, vocab, step, epoch, rngs, kind="last_good"))
                    raise NumericalFailure(f"step {step}: {exc}") from exc
                lrs = lr_at(step, opt_cfg)
                opt.step(lrs)
                step += 1
                row = {
                    "step": step, "epoch": epoch, "lambda": lam,
                    "ce": float(np.mean([p.ce for p in parts])),
                    "con": float(np.mean([p.con for p in parts])),
                    "total": float(np.mean([p.total for p in parts])),
                    "lr_backbone": lrs["backbone"], "lr_new": lrs["new"],
                    "grad_norm": norm, "clip_scale": scale,
                }
                result.history.append(row)
                if writer is not None:
                    writer.writerow([row[c] for c in LOG_COLUMNS])
                last_good = model.state_dict()
            if val_b is not None:
                rep = evaluate_batch(model, val_b)
                result.val_history.append({"epoch": epoch, "val_weighted_f1": rep.weighted_f1,
                                           "val_weighted_recall": rep.weighted_recall})
                log.info("epoch %d  val weighted F1 %.4f", epoch, rep.weighted_f1)
                if result.best_val_f1 is None or rep.weighted_f1 > result.best_val_f1:
                    result.best_val_f1 = rep.weighted_f1
                    result.best_epoch = epoch
                    result.best_state = {k: v.copy() for k, v in model.state_dict().items()}
                    result.best_meta = checkpoint_metadata(cfg, vocab, step, epoch, rngs, kind="best",
                                                           val_weighted_f1=rep.weighted_f1)
    finally:
        if log_fh is not None:
            log_fh.close()
    result.final_meta = checkpoint_metadata(cfg, vocab, step, cfg.epochs, rngs, kind="final")
    if out is not None:
        save_model(out / "final.larc", model, result.final_meta)
        if result.best_state is not None:
            checkpoint.save(out / "best.larc", result.best_state, result.best_meta)
        with (out / "val_log.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "val_weighted_f1", "val_weighted_recall"))
            for r in result.val_history:
                w.writerow((r["epoch"], r["val_weighted_f1"], r["val_weighted_recall"]))
    return result
