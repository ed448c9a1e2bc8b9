"""Embedding tables, dataset parsers and padded batching."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, EmptySequenceError, FormatError, ParseError, UnknownTokenError

log = logging.getLogger(__name__)

PAIR_LABELS = ("entailment", "contradiction", "neutral")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class EmbeddingTable:
    """Token vectors stored column-wise as a ``[d0, V]`` matrix.

    The table is frozen by default: it holds plain arrays, never tensors that
    an optimizer could update.
    """

    def __init__(self, vocab: dict[str, int], matrix: np.ndarray, frozen: bool = True):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(vocab):
            raise FormatError(f"embedding matrix {matrix.shape} does not fit a vocabulary of {len(vocab)}")
        if sorted(vocab.values()) != list(range(len(vocab))):
            raise FormatError("vocabulary indices must be 0..V-1")
        self.vocab = dict(vocab)
        self.matrix = matrix
        self.frozen = frozen

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingTable":
        return cls({}, np.zeros((dim, 0)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def tokens(self) -> list[str]:
        out = [""] * len(self.vocab)
        for tok, i in self.vocab.items():
            out[i] = tok
        return out

    def add_rows(self, tokens: Sequence[str], rows: np.ndarray) -> None:
        """Append vectors; ``rows`` is ``[len(tokens), d0]``."""
        rows = np.asarray(rows, dtype=np.float64).reshape(len(tokens), self.dim)
        fresh = [t for t in tokens if t not in self.vocab]
        if len(fresh) != len(tokens) or len(set(tokens)) != len(tokens):
            raise FormatError("add_rows got duplicate or already-present tokens")
        for tok in tokens:
            self.vocab[tok] = len(self.vocab)
        self.matrix = np.concatenate([self.matrix, rows.T], axis=1)

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        """``[d0, n]`` matrix of the tokens' vectors."""
        try:
            idx = [self.vocab[t] for t in tokens]
        except KeyError as exc:
            raise UnknownTokenError(f"token {exc.args[0]!r} has no embedding") from None
        return self.matrix[:, idx]

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.matrix).tobytes()).hexdigest()


def load_pretrained_vectors(
    path: str | Path, wanted: Iterable[str] | None = None, dim: int | None = None
) -> tuple[EmbeddingTable, set[str]]:
    """Read ``token v1 ... v_d`` lines, keeping only ``wanted`` tokens.

    Returns the table (rows in file order) and the wanted tokens not found.
    Every line must carry the same number of values.
    """
    wanted_set = None if wanted is None else set(wanted)
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split(" ")
            if len(fields) < 2:
                raise ParseError("expected a token followed by values", lineno, path)
            token, values = fields[0], fields[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise FormatError(f"{path}: line {lineno}: {len(values)} values, expected {dim}")
            if wanted_set is not None and token not in wanted_set:
                continue
            if token in vocab:
                continue
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise ParseError("non-numeric vector component", lineno, path) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite vector component", lineno, path)
            vocab[token] = len(vocab)
            rows.append(vec)
    if dim is None:
        raise FormatError(f"{path}: no vectors found")
    matrix = np.stack(rows, axis=1) if rows else np.zeros((dim, 0))
    missing = set() if wanted_set is None else wanted_set - vocab.keys()
    return EmbeddingTable(vocab, matrix), missing


def init_oov(
    table: EmbeddingTable, missing: Iterable[str], bound: float, rng: np.random.Generator
) -> list[str]:
    """Give each missing token an i.i.d. ``U(-bound, bound)`` vector.

    Tokens are added in sorted order so results do not depend on set order.
    """
    if bound <= 0:
        raise ConfigError(f"OOV bound must be positive, got {bound}")
    tokens = sorted(set(missing) - table.vocab.keys())
    if tokens:
        table.add_rows(tokens, rng.uniform(-bound, bound, size=(len(tokens), table.dim)))
    return tokens


@dataclass
class PairExample:
    premise: list[str]
    hypothesis: list[str]
    label: int

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise EmptySequenceError("pair examples need non-empty premise and hypothesis")


@dataclass
class SentenceExample:
    tokens: list[str]
    label: int


def _split_tsv(line: str, fields: int, lineno: int, path) -> list[str]:
    parts = line.split("\t")
    if len(parts) != fields:
        raise ParseError(f"expected {fields} tab-separated fields, got {len(parts)}", lineno, path)
    return parts


def parse_pair_dataset(path: str | Path) -> tuple[list[PairExample], int]:
    """Parse ``label<TAB>premise<TAB>hypothesis`` lines.

    Lines labelled ``-`` (no annotator consensus) are skipped; the second
    return value counts them.
    """
    examples: list[PairExample] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            label, premise, hypothesis = _split_tsv(line, 3, lineno, path)
            label = label.strip().lower()
            if label == "-":
                skipped += 1
                continue
            if label not in PAIR_LABELS:
                raise ParseError(f"unknown label {label!r}", lineno, path)
            p, h = tokenize(premise), tokenize(hypothesis)
            if not p or not h:
                raise ParseError("empty premise or hypothesis", lineno, path)
            examples.append(PairExample(p, h, PAIR_LABELS.index(label)))
    if skipped:
        log.info("%s: skipped %d pairs without a gold label", path, skipped)
    return examples, skipped


def parse_sentence_dataset(path: str | Path, n_classes: int) -> list[SentenceExample]:
    """Parse ``label<TAB>sentence`` lines with integer labels in ``[0, n_classes)``."""
    examples: list[SentenceExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            label, sentence = _split_tsv(line, 2, lineno, path)
            try:
                y = int(label)
            except ValueError:
                raise ParseError(f"label {label!r} is not an integer", lineno, path) from None
            if not 0 <= y < n_classes:
                raise ParseError(f"label {y} outside [0, {n_classes})", lineno, path)
            tokens = tokenize(sentence)
            if not tokens:
                raise ParseError("empty sentence", lineno, path)
            examples.append(SentenceExample(tokens, y))
    return examples


def sniff_task(path: str | Path) -> str:
    """``"pair"`` or ``"single"`` from the field count of the first data line."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return "pair" if line.count("\t") == 2 else "single"
    return "empty"


@dataclass
class Batch:
    """Padded embeddings ``x`` ``[B, d0, n_max]`` plus a validity ``mask`` ``[B, n_max]``.

    Pair batches carry the hypothesis in ``x2``/``mask2``.
    """

    x: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    x2: np.ndarray | None = None
    mask2: np.ndarray | None = None
    indices: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.labels)


def pad_sequences(table: EmbeddingTable, sequences: Sequence[Sequence[str]], dtype=np.float64):
    n_max = max(len(s) for s in sequences)
    x = np.zeros((len(sequences), table.dim, n_max), dtype=dtype)
    mask = np.zeros((len(sequences), n_max), dtype=bool)
    for i, seq in enumerate(sequences):
        x[i, :, : len(seq)] = table.lookup(seq)
        mask[i, : len(seq)] = True
    return x, mask


def make_batches(
    examples: Sequence[PairExample | SentenceExample],
    table: EmbeddingTable,
    batch_size: int,
    rng: np.random.Generator | None = None,
    dtype=np.float64,
) -> Iterator[Batch]:
    """Yield zero-padded batches; shuffles when ``rng`` is given.

    The last batch may be smaller than ``batch_size``.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = np.arange(len(examples))
    if rng is not None:
        order = rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        chunk = [examples[i] for i in idx]
        labels = np.array([ex.label for ex in chunk], dtype=np.int64)
        if isinstance(chunk[0], PairExample):
            x, mask = pad_sequences(table, [ex.premise for ex in chunk], dtype)
            x2, mask2 = pad_sequences(table, [ex.hypothesis for ex in chunk], dtype)
            yield Batch(x, mask, labels, x2, mask2, indices=idx)
        else:
            x, mask = pad_sequences(table, [ex.tokens for ex in chunk], dtype)
            yield Batch(x, mask, labels, indices=idx)


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
