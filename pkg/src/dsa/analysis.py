"""Inspection tools: PCA of dynamic weight vectors and attention-map export.

Outputs are plain files. PCA projections are written as CSV (``x,y`` header,
LF line endings) with a small sidecar holding the explained variances and an
optional static SVG scatter. Attention maps are JSON documents.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import AttentionTrace, extract_dynamic_weight_vector
from .errors import ContractError, DimensionError, FormatError, InsufficientDataError
from .model import DsaModel

ATTN_FORMAT = "dsa-attention-v1"


@dataclass
class PcaResult:
    mean: np.ndarray  # [d]
    directions: np.ndarray  # [2, d], orthonormal rows
    explained_variance: np.ndarray  # [2], descending, non-negative
    projected: np.ndarray  # [N, 2]
    total_variance: float = 0.0

    def reconstruct(self) -> np.ndarray:
        """Points mapped back from the top-2 subspace, ``[N, d]``."""
        return self.mean + self.projected @ self.directions


def collect_dynamic_vectors(
    sentences: Sequence[Sequence[str]], model: DsaModel, head: int = 0, batch_size: int = 64
) -> np.ndarray:
    """Head ``head``'s dynamic weight vector at iteration ``r-1`` per sentence.

    Runs the encoder in eval mode with trace retention. Returns ``[N, d_o]``.
    """
    cfg = model.config
    if cfg.attention != "dsa" or cfg.dsa.r < 2:
        raise ContractError(
            f"dynamic weight vectors need DSA attention with r >= 2 (attention={cfg.attention}, r={cfg.dsa.r})"
        )
    if not 0 <= head < cfg.dsa.m:
        raise ContractError(f"head {head} outside [0, {cfg.dsa.m})")
    rows = []
    for start in range(0, len(sentences), batch_size):
        _, trace = model.encode_sentences(sentences[start : start + batch_size], keep_trace=True)
        rows.append(extract_dynamic_weight_vector(trace, head))
    if not rows:
        return np.zeros((0, cfg.dsa.d_o), dtype=model.dtype)
    return np.concatenate(rows, axis=0)


def pca_2d(points) -> PcaResult:
    """Project onto the two leading principal directions.

    Uses an eigendecomposition of the sample covariance (``N - 1``
    normalisation). Each direction is flipped so its largest-magnitude
    coordinate is positive, which makes the output reproducible.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"pca_2d expects an [N, d] matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 3:
        raise InsufficientDataError(f"PCA needs at least 3 points, got {n}")
    if d < 2:
        raise DimensionError(f"PCA to 2D needs at least 2 features, got {d}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    directions = evecs[:, order].T.copy()
    for row in directions:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    variances = np.clip(evals[order], 0.0, None)
    return PcaResult(
        mean=mean,
        directions=directions,
        explained_variance=variances,
        projected=centered @ directions.T,
        total_variance=float(np.clip(evals, 0.0, None).sum()),
    )


def quadrants_occupied(projected) -> int:
    """How many of the four open quadrants around the origin contain a point."""
    P = np.asarray(projected)
    signs = {(bool(x > 0), bool(y > 0)) for x, y in P if x != 0 and y != 0}
    return len(signs)


def max_point_variance_share(points) -> float:
    """Largest fraction of the total squared deviation owed to a single point."""
    X = np.asarray(points, dtype=np.float64)
    sq = ((X - X.mean(axis=0)) ** 2).sum(axis=1)
    total = sq.sum()
    return float(sq.max() / total) if total > 0 else 1.0


# -----------------------------------------------------------------------------
# File output
# -----------------------------------------------------------------------------


def export_attention_map(tokens: Sequence[str], trace: AttentionTrace, path: str | Path) -> Path:
    """Write one sentence's routing trace as JSON.

    ``weights[t][j]`` lists head ``j``'s weight on every token at iteration
    ``t``; ``z_norms`` are the Euclidean norms of the final dynamic vectors.
    """
    if trace is None or trace.iterations == 0:
        raise ContractError("attention export needs a recorded trace")
    if trace.batched:
        raise ContractError("export a single sentence: use trace.sentence(b)")
    n = trace.weights[0].shape[0]
    if len(tokens) != n:
        raise DimensionError(f"{len(tokens)} tokens for a trace over {n} positions")
    doc = {
        "format": ATTN_FORMAT,
        "tokens": list(tokens),
        "heads": int(trace.weights[0].shape[1]),
        "iterations": trace.iterations,
        "weights": [a.T.tolist() for a in trace.weights],
        "logits": [q.T.tolist() for q in trace.logits],
        "z": [z.tolist() for z in trace.z],
        "z_norms": np.linalg.norm(trace.z[-1], axis=-1).tolist(),
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return path


def load_attention_map(path: str | Path) -> tuple[list[str], AttentionTrace]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != ATTN_FORMAT:
        raise FormatError(f"{path} is not a {ATTN_FORMAT} document")
    trace = AttentionTrace(
        logits=[np.array(q, dtype=np.float64).T for q in doc["logits"]],
        weights=[np.array(a, dtype=np.float64).T for a in doc["weights"]],
        z=[np.array(z, dtype=np.float64) for z in doc["z"]],
    )
    return doc["tokens"], trace


def _svg_scatter(P: np.ndarray, size: int = 400, pad: int = 20) -> str:
    span = np.abs(P).max() if P.size else 1.0
    span = span if span > 0 else 1.0
    scale = (size / 2 - pad) / span
    c = size / 2
    dots = "\n".join(
        f'<circle cx="{c + x * scale:.2f}" cy="{c - y * scale:.2f}" r="2.5" fill="#1f77b4" fill-opacity="0.7"/>'
        for x, y in P
    )
    axes = (
        f'<line x1="0" y1="{c}" x2="{size}" y2="{c}" stroke="#999"/>'
        f'<line x1="{c}" y1="0" x2="{c}" y2="{size}" stroke="#999"/>'
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n{axes}\n{dots}\n</svg>\n'
    )


def export_pca_scatter(result: PcaResult, path: str | Path, svg: bool = False) -> dict[str, Path]:
    """Write ``path`` (CSV), ``<stem>.variance.txt`` and optionally ``<stem>.svg``."""
    path = Path(path)
    out = {"csv": path, "variance": path.with_name(path.stem + ".variance.txt")}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y"])
        for x, y in result.projected:
            writer.writerow([f"{x:.17g}", f"{y:.17g}"])
    v1, v2 = result.explained_variance
    total = result.total_variance
    lines = [f"pc1\t{v1:.17g}", f"pc2\t{v2:.17g}", f"total\t{total:.17g}"]
    out["variance"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    if svg:
        out["svg"] = path.with_suffix(".svg")
        out["svg"].write_text(_svg_scatter(result.projected), encoding="utf-8")
    return out


def read_pca_csv(path: str | Path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "y"]:
        raise FormatError(f"{path}: expected an 'x,y' header")
    try:
        return np.array([[float(x), float(y)] for x, y in rows[1:]], dtype=np.float64).reshape(-1, 2)
    except ValueError:
        raise FormatError(f"{path}: malformed row") from None
