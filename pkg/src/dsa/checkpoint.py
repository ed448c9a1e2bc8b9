"""``dsa-ckpt-v1`` checkpoint archives.

A checkpoint is an uncompressed ``.npz`` archive. Each trainable parameter is
stored under its canonical name (``encoder.block1.layer3.conv.weight``) as
little-endian float64. Metadata entries:

* ``__format__``: the string ``dsa-ckpt-v1``
* ``__config__``: JSON of the flat model configuration
* ``__meta__``: JSON with run metadata (seed, OOV bound, ...)
* ``__vocab__``: JSON list of embedding tokens in column order
* ``__embeddings__``: the frozen ``[d0, V]`` embedding matrix
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .config import model_config_from_flat, model_config_to_flat
from .data import EmbeddingTable
from .errors import FormatError
from .model import DsaModel

FORMAT = "dsa-ckpt-v1"


def save_checkpoint(path: str | Path, model: DsaModel, meta: dict | None = None) -> Path:
    """Write atomically: a partial file never appears at ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries: dict[str, np.ndarray] = {
        "__format__": np.array(FORMAT),
        "__config__": np.array(json.dumps(model_config_to_flat(model.config), sort_keys=True)),
        "__meta__": np.array(json.dumps(meta or {}, sort_keys=True)),
        "__vocab__": np.array(json.dumps(model.embeddings.tokens())),
        "__embeddings__": model.embeddings.matrix.astype("<f8"),
    }
    for name, p in model.named_parameters():
        entries[name] = p.data.astype("<f8")
    for name, buf in model.named_buffers():
        entries[name] = np.asarray(buf).astype("<f8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **entries)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: str | Path, dtype=np.float64) -> tuple[DsaModel, dict]:
    """Rebuild the model stored at ``path``; returns ``(model, meta)``."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    with archive:
        if "__format__" not in archive.files or str(archive["__format__"]) != FORMAT:
            raise FormatError(f"{path} is not a {FORMAT} checkpoint")
        config = model_config_from_flat(json.loads(str(archive["__config__"])))
        meta = json.loads(str(archive["__meta__"]))
        tokens = json.loads(str(archive["__vocab__"]))
        table = EmbeddingTable({t: i for i, t in enumerate(tokens)}, archive["__embeddings__"])
        model = DsaModel.init(config, table, np.random.default_rng(0), dtype)
        for name, p in model.named_parameters():
            if name not in archive.files:
                raise FormatError(f"{path}: missing parameter {name}")
            arr = archive[name]
            if arr.shape != p.shape:
                raise FormatError(f"{path}: {name} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.astype(dtype)
        for name, buf in model.named_buffers():
            if name in archive.files:
                buf[...] = archive[name]
    return model, meta
