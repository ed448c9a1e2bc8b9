"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 data or I/O error.
Set ``DSA_LOG`` (``DEBUG``, ``INFO``, ``WARNING``, ...) to control logging.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import config as config_io
from .analysis import collect_dynamic_vectors, export_attention_map, export_pca_scatter, pca_2d
from .checkpoint import load_checkpoint
from .data import PairExample, init_oov, sniff_task, tokenize
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DsaError,
    EmptySequenceError,
    InsufficientDataError,
    UnknownTokenError,
)
from .model import DsaModel, param_breakdown
from .toy import write_toy_workspace
from .train import accuracy, load_examples, run_training

log = logging.getLogger("dsa")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _setup_logging() -> None:
    level = os.environ.get("DSA_LOG", "WARNING").strip().upper()
    numeric = int(level) if level.isdigit() else logging.getLevelName(level)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load_model(path) -> tuple[DsaModel, dict]:
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}", EXIT_DATA) from None


def _cover_tokens(model: DsaModel, meta: dict, token_lists) -> list[str]:
    """Give unseen tokens seeded ``U(-b, b)`` vectors in the in-memory table only."""
    missing = {t for toks in token_lists for t in toks if t not in model.embeddings}
    if not missing:
        return []
    rng = np.random.default_rng([int(meta.get("seed", 0)), 0x00F])
    added = init_oov(model.embeddings, missing, float(meta.get("oov_bound", 0.005)), rng)
    log.info("%d tokens not in the checkpoint vocabulary got OOV vectors", len(added))
    return added


def _read_sentences(path) -> list[list[str]]:
    """Tokenized non-empty lines; empty lines are skipped with a warning."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = tokenize(line)
            if not tokens:
                log.warning("%s:%d: empty line skipped", path, lineno)
                continue
            out.append(tokens)
    return out


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = config_io.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    result = run_training(cfg)
    final = result.final
    print(
        f"epochs {final.epoch}  train_loss {final.train_loss:.6f}  train_acc {final.train_acc:.4f}  "
        f"checkpoint {result.checkpoint}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta = _load_model(args.ckpt)
    task = sniff_task(args.data)
    if task == "empty":
        raise CliError(f"{args.data}: empty dataset", EXIT_DATA)
    if task != model.config.task:
        raise CliError(f"checkpoint is a {model.config.task!r} model but {args.data} is a {task!r} dataset", EXIT_CONFIG)
    examples = load_examples(args.data, task, model.config.classifier.n_classes)
    if not examples:
        raise CliError(f"{args.data}: no usable examples", EXIT_DATA)
    seqs = [s for ex in examples for s in ((ex.premise, ex.hypothesis) if isinstance(ex, PairExample) else (ex.tokens,))]
    _cover_tokens(model, meta, seqs)
    acc = accuracy(model, examples, args.batch_size)
    correct = round(acc * len(examples))
    report = {"data": str(args.data), "correct": correct, "total": len(examples), "accuracy": acc}
    print(f"accuracy {correct}/{len(examples)} = {acc:.6f}")
    out = Path(args.out) if args.out else Path(args.ckpt).parent / f"eval_{Path(args.data).stem}.json"
    out.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_encode(args) -> int:
    model, meta = _load_model(args.ckpt)
    sentences = _read_sentences(args.input)
    _cover_tokens(model, meta, sentences)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for start in range(0, len(sentences), args.batch_size):
            vecs, _ = model.encode_sentences(sentences[start : start + args.batch_size])
            for row in vecs:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    log.info("wrote %d embeddings of dimension %d", len(sentences), model.config.sentence_dim)
    return EXIT_OK


def cmd_analyze(args) -> int:
    model, meta = _load_model(args.ckpt)
    if args.mode == "pca" and (model.config.attention != "dsa" or model.config.dsa.r < 2):
        raise CliError(
            f"pca mode needs DSA attention with r >= 2 (checkpoint has r={model.config.dsa.r}, "
            f"attention={model.config.attention})",
            EXIT_CONFIG,
        )
    sentences = _read_sentences(args.input)
    _cover_tokens(model, meta, sentences)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "pca":
        vectors = collect_dynamic_vectors(sentences, model, head=args.head)
        result = pca_2d(vectors)
        paths = export_pca_scatter(result, out_dir / "pca.csv", svg=args.svg)
        v1, v2 = result.explained_variance
        print(f"pca over {len(sentences)} sentences: explained variance {v1:.6g}, {v2:.6g} -> {paths['csv']}")
    else:
        for i, tokens in enumerate(sentences, start=1):
            _, trace = model.encode_sentences([tokens], keep_trace=True)
            export_attention_map(tokens, trace.sentence(0), out_dir / f"attn_{i:04d}.json")
        print(f"wrote {len(sentences)} attention maps to {out_dir}")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = config_io.load(args.config, resolve=False)
    breakdown = param_breakdown(cfg.model)
    for name, count in breakdown.items():
        print(f"{name:<18}{count:>12}")
    print(f"{'total_millions':<18}{breakdown['total'] / 1e6:>12.3f}")
    return EXIT_OK


def cmd_make_toy(args) -> int:
    paths = write_toy_workspace(args.out, seed=args.seed)
    for name, path in paths.items():
        print(f"{name:<10}{path}")
    return EXIT_OK


# -----------------------------------------------------------------------------
# Parser and dispatch
# -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="limit BLAS threads (1 gives bit-reproducible runs)")

    parser = argparse.ArgumentParser(prog="dsa", description="Dynamic self-attention sentence encoder.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint on a labelled dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="JSON report path (default: eval_<data>.json next to the checkpoint)")
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("encode", parents=[common], help="embed one sentence per line as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("analyze", parents=[common], help="PCA of dynamic weight vectors or attention maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mode", choices=("pca", "attn"), required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--head", type=int, default=0, help="head whose vectors enter the PCA")
    p.add_argument("--svg", action="store_true", help="also draw the PCA scatter as SVG")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("params", help="parameter count with per-module breakdown")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("make-toy", help="write the synthetic toy workspace")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, (ConfigError, ContractError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, OSError, UnknownTokenError, EmptySequenceError, InsufficientDataError)):
        return EXIT_DATA
    return 1


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        print("dsa: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    limits = threadpool_limits(limits=threads) if threads else contextlib.nullcontext()
    try:
        with limits:
            return args.func(args)
    except (CliError, DsaError, OSError) as exc:
        code = _exit_code(exc)
        if code == 1:
            raise
        print(f"dsa {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
