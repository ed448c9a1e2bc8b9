"""Seeded synthetic corpora for smoke tests and demos.

Pairs are labelled by a keyword rule: each class owns three keywords and the
hypothesis contains exactly one of them; everything else is filler drawn
from the remaining vocabulary.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from . import config as config_io
from .attention import DsaConfig
from .config import DataConfig, OptimConfig, OutputConfig, RunConfig, TrainConfig
from .data import PAIR_LABELS
from .encoder import EncoderConfig
from .model import ClassifierConfig, ModelConfig

KEYWORDS_PER_CLASS = 3


def toy_vocabulary(size: int = 50) -> list[str]:
    return [f"w{i:02d}" for i in range(size)]


def _sentence(rng, filler, length, keyword=None) -> list[str]:
    words = list(rng.choice(filler, size=length))
    if keyword is not None:
        words.insert(int(rng.integers(0, length + 1)), keyword)
    return words


def make_toy_pairs(
    n: int = 64, vocab_size: int = 50, seed: int = 0, min_len: int = 3, max_len: int = 8
) -> list[tuple[str, list[str], list[str]]]:
    """``n`` distinct (label, premise, hypothesis) triples with balanced labels."""
    rng = np.random.default_rng(seed)
    vocab = toy_vocabulary(vocab_size)
    n_classes = len(PAIR_LABELS)
    keywords = [vocab[c * KEYWORDS_PER_CLASS : (c + 1) * KEYWORDS_PER_CLASS] for c in range(n_classes)]
    filler = vocab[n_classes * KEYWORDS_PER_CLASS :]
    labels = rng.permutation(np.arange(n) % n_classes)
    out, seen = [], set()
    for y in labels:
        while True:
            premise = _sentence(rng, filler, int(rng.integers(min_len, max_len + 1)))
            hyp = _sentence(rng, filler, int(rng.integers(min_len, max_len)), str(rng.choice(keywords[y])))
            key = (tuple(premise), tuple(hyp))
            if key not in seen:
                seen.add(key)
                break
        out.append((PAIR_LABELS[y], premise, hyp))
    return out


def make_toy_sentences(n: int = 200, vocab_size: int = 50, seed: int = 1, min_len: int = 2, max_len: int = 10) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    vocab = toy_vocabulary(vocab_size)
    out, seen = [], set()
    while len(out) < n:
        s = list(rng.choice(vocab, size=int(rng.integers(min_len, max_len + 1))))
        if tuple(s) not in seen:
            seen.add(tuple(s))
            out.append(s)
    return out


def toy_run_config(**train_overrides) -> RunConfig:
    """Scaled-down pair-task configuration that trains in seconds."""
    model = ModelConfig(
        encoder=EncoderConfig(d0=8, d1=16, dl=8, L=2, k1=3, k2=5, dc=16, dropout_rate=0.1),
        dsa=DsaConfig(m=1, d_o=16, r=2),
        classifier=ClassifierConfig(hidden=(32,), dropout_rate=0.1, n_classes=3),
        task="pair",
        embed_dropout=0.1,
    )
    train = TrainConfig(epochs=200, batch_size=16, seed=0, stop_at_accuracy=1.0)
    train = dataclasses.replace(train, **train_overrides)
    return RunConfig(
        model=model,
        optim=OptimConfig(name="adam", lr=5e-3, halving_trigger=5),
        train=train,
        data=DataConfig(train="train.tsv", vectors="vectors.txt"),
        output=OutputConfig(dir="run"),
    )


def write_toy_workspace(
    directory: str | Path,
    seed: int = 0,
    n_pairs: int = 64,
    vocab_size: int = 50,
    d0: int = 8,
    n_sentences: int = 200,
    missing_vectors: int = 2,
) -> dict[str, Path]:
    """Write ``train.tsv``, ``vectors.txt``, ``sentences.txt`` and ``config.cfg``.

    The last ``missing_vectors`` vocabulary words get no vector so the OOV
    path is exercised.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed + 1000)
    paths = {
        "train": directory / "train.tsv",
        "vectors": directory / "vectors.txt",
        "sentences": directory / "sentences.txt",
        "config": directory / "config.cfg",
    }
    with open(paths["train"], "w", encoding="utf-8") as fh:
        for label, premise, hyp in make_toy_pairs(n_pairs, vocab_size, seed):
            fh.write(f"{label}\t{' '.join(premise)}\t{' '.join(hyp)}\n")
    vocab = toy_vocabulary(vocab_size)
    with open(paths["vectors"], "w", encoding="utf-8") as fh:
        for tok in vocab[: vocab_size - missing_vectors]:
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in rng.normal(size=d0)) + "\n")
    with open(paths["sentences"], "w", encoding="utf-8") as fh:
        for s in make_toy_sentences(n_sentences, vocab_size, seed + 1):
            fh.write(" ".join(s) + "\n")
    cfg = toy_run_config(seed=seed)
    if d0 != cfg.model.encoder.d0:
        enc = dataclasses.replace(cfg.model.encoder, d0=d0)
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, encoder=enc))
    paths["config"].write_text("# synthetic keyword-rule pair task\n" + config_io.dumps(cfg), encoding="utf-8")
    return paths
