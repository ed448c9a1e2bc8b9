"""Training loop: mini-batches, optimizer steps, plateau halving, logging."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import (
    EmbeddingTable,
    PairExample,
    SentenceExample,
    init_oov,
    load_pretrained_vectors,
    make_batches,
    parse_pair_dataset,
    parse_sentence_dataset,
)
from .errors import DataError
from .model import DsaModel
from .optim import HalvingSchedule, make_optimizer
from .tensor import backward, no_grad

log = logging.getLogger(__name__)

LOG_HEADER = "epoch\ttrain_loss\ttrain_acc\teval_acc\tlr_multiplier"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float
    lr_multiplier: float

    def tsv(self) -> str:
        return f"{self.epoch}\t{self.train_loss!r}\t{self.train_acc!r}\t{self.eval_acc!r}\t{self.lr_multiplier!r}"


@dataclass
class TrainResult:
    model: DsaModel
    history: list[EpochRecord] = field(default_factory=list)
    checkpoint: Path | None = None

    @property
    def final(self) -> EpochRecord:
        return self.history[-1]


def load_examples(path, task: str, n_classes: int) -> list:
    if task == "pair":
        examples, _ = parse_pair_dataset(path)
    else:
        examples = parse_sentence_dataset(path, n_classes)
    return examples


def vocabulary(examples: Sequence[PairExample | SentenceExample]) -> list[str]:
    seen: dict[str, None] = {}
    for ex in examples:
        seqs = (ex.premise, ex.hypothesis) if isinstance(ex, PairExample) else (ex.tokens,)
        for seq in seqs:
            for tok in seq:
                seen.setdefault(tok)
    return sorted(seen)


def build_embeddings(
    vectors_path, tokens: Sequence[str], d0: int, oov_bound: float, rng: np.random.Generator
) -> EmbeddingTable:
    table, missing = load_pretrained_vectors(vectors_path, wanted=tokens, dim=d0)
    added = init_oov(table, missing, oov_bound, rng)
    log.info("embeddings: %d pretrained, %d OOV", len(table) - len(added), len(added))
    return table


def accuracy(model: DsaModel, examples: Sequence, batch_size: int = 256) -> float:
    if not examples:
        raise DataError("accuracy over an empty dataset")
    correct = 0
    for batch in make_batches(examples, model.embeddings, batch_size, dtype=model.dtype):
        correct += int((model.predict(batch) == batch.labels).sum())
    return correct / len(examples)


def train_model(
    model: DsaModel,
    examples: Sequence,
    *,
    epochs: int,
    batch_size: int,
    optimizer: str = "adam",
    lr: float | None = None,
    weight_decay: float = 1e-5,
    halving_trigger: int = 5,
    patience: float = 1e-3,
    seed: int = 0,
    eval_examples: Sequence | None = None,
    stop_at_accuracy: float | None = None,
    log_file: TextIO | None = None,
) -> list[EpochRecord]:
    """Fit ``model`` on ``examples``; returns one record per epoch run."""
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    opt = make_optimizer(optimizer, model.parameters(), lr or None, weight_decay)
    schedule = HalvingSchedule(trigger=halving_trigger, patience=patience)
    needs_pairs = bool(model.config.classifier.hidden)
    history: list[EpochRecord] = []
    if log_file is not None:
        print(LOG_HEADER, file=log_file, flush=True)
    for epoch in range(1, epochs + 1):
        total, seen = 0.0, 0
        for batch in make_batches(examples, model.embeddings, batch_size, shuffle_rng, model.dtype):
            if needs_pairs and batch.size < 2:
                # batch norm cannot train on a single example
                log.debug("skipping singleton batch in epoch %d", epoch)
                continue
            opt.zero_grad()
            loss, _ = model.loss(batch, training=True, rng=dropout_rng)
            backward(loss)
            opt.step()
            total += loss.item() * batch.size
            seen += batch.size
        epoch_loss = total / max(seen, 1)
        opt.lr_multiplier = schedule.update(epoch_loss)
        with no_grad():
            train_acc = accuracy(model, examples, batch_size)
            eval_acc = accuracy(model, eval_examples, batch_size) if eval_examples else math.nan
        record = EpochRecord(epoch, epoch_loss, train_acc, eval_acc, opt.lr_multiplier)
        history.append(record)
        if log_file is not None:
            print(record.tsv(), file=log_file, flush=True)
        log.info(
            "epoch %d loss %.5f train_acc %.4f eval_acc %.4f lr x%g",
            epoch, epoch_loss, train_acc, eval_acc, opt.lr_multiplier,
        )
        if stop_at_accuracy and train_acc >= stop_at_accuracy:
            break
    return history


def run_training(config: RunConfig) -> TrainResult:
    """Load data, train, and write checkpoint, epoch log and metrics.

    All inputs are read before anything is written, so data errors never
    leave a partial checkpoint behind.
    """
    mcfg = config.model
    dtype = np.dtype(config.train.precision)
    if not config.data.train or not config.data.vectors:
        raise DataError("data.train and data.vectors must be set")
    try:
        train_examples = load_examples(config.data.train, mcfg.task, mcfg.classifier.n_classes)
        eval_examples = (
            load_examples(config.data.eval, mcfg.task, mcfg.classifier.n_classes) if config.data.eval else None
        )
        if not train_examples:
            raise DataError(f"{config.data.train}: no training examples")
        tokens = vocabulary(list(train_examples) + list(eval_examples or []))
        init_rng, oov_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.train.seed).spawn(2))
        table = build_embeddings(config.data.vectors, tokens, mcfg.encoder.d0, config.optim.oov_bound, oov_rng)
    except OSError as exc:
        raise DataError(str(exc)) from None
    model = DsaModel.init(mcfg, table, init_rng, dtype)
    out_dir = Path(config.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train_log.tsv", "w", encoding="utf-8") as fh:
        history = train_model(
            model,
            train_examples,
            epochs=config.train.epochs,
            batch_size=config.train.batch_size,
            optimizer=config.optim.name,
            lr=config.optim.lr,
            weight_decay=config.optim.weight_decay,
            halving_trigger=config.optim.halving_trigger,
            patience=config.optim.patience,
            seed=config.train.seed,
            eval_examples=eval_examples,
            stop_at_accuracy=config.train.stop_at_accuracy,
            log_file=fh,
        )
    meta = {"seed": config.train.seed, "oov_bound": config.optim.oov_bound, "epochs_run": len(history)}
    ckpt = save_checkpoint(out_dir / "model.ckpt", model, meta)
    summary = asdict(history[-1])
    if math.isnan(summary["eval_acc"]):
        summary["eval_acc"] = None
    summary["parameters"] = model.num_parameters()
    (out_dir / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return TrainResult(model, history, ckpt)
