"""Tokenisation, JSONL dataset I/O, deterministic splits and a synthetic corpus."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

PAD, CLS, UNK = "[PAD]", "[CLS]", "[UNK]"
SPECIALS = (PAD, CLS, UNK)
PAD_ID, CLS_ID, UNK_ID = 0, 1, 2


@dataclass(frozen=True)
class Example:
    text: str
    label: int

    def __post_init__(self):
        if not self.text:
            raise DataError("example text is empty")
        if self.label < 0:
            raise DataError(f"negative label {self.label}")


class Vocabulary:
    """Token to id map with fixed specials at ids 0, 1, 2."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise DataError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __getitem__(self, tok: str) -> int:
        return self.stoi.get(tok, UNK_ID)

    @property
    def tokens(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int | None = None, min_count: int = 1) -> "Vocabulary":
        """Most frequent tokens first, ties broken alphabetically."""
        counts = Counter(tok for text in texts for tok in split_words(text))
        ranked = sorted((t for t, n in counts.items() if n >= min_count and t not in SPECIALS),
                        key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(SPECIALS))]
        return cls(ranked)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


def split_words(text: str) -> list[str]:
    return text.lower().split()


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Ids, attention mask and whether the text was truncated.

    Lowercases, splits on whitespace, prepends [CLS], truncates to ``max_len``
    and pads with [PAD].
    """
    if max_len < 2:
        raise ConfigError("max_len must be >= 2")
    ids = [CLS_ID] + [vocab[w] for w in split_words(text)]
    truncated = len(ids) > max_len
    ids = ids[:max_len]
    out = np.full(max_len, PAD_ID, dtype=np.int64)
    out[: len(ids)] = ids
    mask = np.zeros(max_len, dtype=bool)
    mask[: len(ids)] = True
    return out, mask, truncated


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.itos[i] for i in ids if i not in (PAD_ID, CLS_ID))


@dataclass
class EncodedBatch:
    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    n_truncated: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def truncated_fraction(self) -> float:
        return self.n_truncated / len(self) if len(self) else 0.0


def encode_examples(examples: Sequence[Example], vocab: Vocabulary, max_len: int) -> EncodedBatch:
    n = len(examples)
    ids = np.zeros((n, max_len), dtype=np.int64)
    mask = np.zeros((n, max_len), dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    n_trunc = 0
    for i, ex in enumerate(examples):
        ids[i], mask[i], cut = tokenize(ex.text, vocab, max_len)
        labels[i] = ex.label
        n_trunc += cut
    if n_trunc:
        log.info("truncated %d of %d examples to %d tokens", n_trunc, n, max_len)
    return EncodedBatch(ids, mask, labels, n_trunc)


# -- JSONL ------------------------------------------------------------------
def read_jsonl(path) -> list[Example]:
    out = []
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file {path} does not exist")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text, label = rec["text"], rec["label"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if not isinstance(text, str) or not isinstance(label, int) or isinstance(label, bool):
                raise DataError(f"{path}:{lineno}: text must be a string and label an integer")
            out.append(Example(text, label))
    return out


def write_jsonl(path, examples: Iterable[Example]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": ex.text, "label": ex.label}, ensure_ascii=False) + "\n")


# -- splits -----------------------------------------------------------------
@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.64
    val: float = 0.16
    test: float = 0.20
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")


def split(dataset: Sequence[Example], spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then contiguous slices of ``round(N * fraction)``; test takes the remainder."""
    n = len(dataset)
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(n * spec.train))
    n_val = int(round(n * spec.val))
    if n_train == 0 or n_val == 0 or n - n_train - n_val <= 0:
        raise ConfigError(f"split of {n} examples leaves an empty part")
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple([dataset[i] for i in idx] for idx in parts)


# -- synthetic corpus -------------------------------------------------------
def synthetic_token_ranges(num_classes: int, vocab_size: int) -> tuple[list[range], range]:
    """Disjoint per-class token ranges followed by the shared range."""
    width = vocab_size // (2 * num_classes)
    classes = [range(k * width, (k + 1) * width) for k in range(num_classes)]
    return classes, range(num_classes * width, vocab_size)


def generate_synthetic(
    num_classes: int,
    vocab_size: int,
    n_per_class: int,
    overlap: float,
    seed: int = 0,
    min_len: int = 8,
    max_len: int = 31,
) -> list[Example]:
    """Balanced corpus of confusable classes.

    Each word of a class-``k`` text comes from the shared range with
    probability ``overlap`` and from class ``k``'s own range otherwise, both
    uniformly. Lengths are uniform in ``[min_len, max_len]``.
    """
    if vocab_size < 10 * num_classes:
        raise ConfigError("vocab_size must be at least 10 * num_classes")
    if not 0.0 <= overlap <= 1.0:
        raise ConfigError("overlap must lie in [0, 1]")
    if not 1 <= min_len <= max_len:
        raise ConfigError("need 1 <= min_len <= max_len")
    rng = np.random.default_rng(seed)
    class_ranges, shared = synthetic_token_ranges(num_classes, vocab_size)
    out = []
    for k in range(num_classes):
        own = class_ranges[k]
        for _ in range(n_per_class):
            length = int(rng.integers(min_len, max_len + 1))
            from_shared = rng.random(length) < overlap
            words = np.where(
                from_shared,
                rng.integers(shared.start, shared.stop, size=length),
                rng.integers(own.start, own.stop, size=length),
            )
            out.append(Example(" ".join(f"w{j}" for j in words), k))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def synthetic_vocabulary(vocab_size: int) -> Vocabulary:
    return Vocabulary(f"w{j}" for j in range(vocab_size))
