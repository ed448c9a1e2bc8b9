"""Small builders shared by several test modules."""

import numpy as np

from dsa.attention import DsaConfig
from dsa.data import EmbeddingTable, PairExample, make_batches
from dsa.encoder import EncoderConfig
from dsa.model import ClassifierConfig, DsaModel, ModelConfig


def random_table(n_tokens, dim, seed=0, prefix="t"):
    rng = np.random.default_rng(seed)
    vocab = {f"{prefix}{i}": i for i in range(n_tokens)}
    return EmbeddingTable(vocab, rng.normal(size=(dim, n_tokens)))


def gradcheck_config(task="pair", attention="dsa", hidden=(5,), m=2, r=2):
    """The toy dimensions used for whole-model gradient checks."""
    return ModelConfig(
        encoder=EncoderConfig(d0=8, d1=4, dl=3, L=2, k1=3, k2=5, dc=6, dropout_rate=0.2),
        dsa=DsaConfig(m=m, d_o=4, r=r),
        classifier=ClassifierConfig(hidden=hidden, dropout_rate=0.1, n_classes=3),
        task=task,
        attention=attention,
        embed_dropout=0.1,
    )


def small_model(config=None, n_tokens=20, seed=0):
    config = config or gradcheck_config()
    table = random_table(n_tokens, config.encoder.d0, seed)
    return DsaModel.init(config, table, np.random.default_rng(seed + 1))


def random_sentence(rng, n_tokens, length):
    return [f"t{i}" for i in rng.integers(0, n_tokens, size=length)]


def pair_batch(model, lengths=((7, 5), (4, 7), (6, 3)), labels=(0, 2, 1), seed=0):
    rng = np.random.default_rng(seed)
    n_tokens = len(model.embeddings)
    examples = [
        PairExample(random_sentence(rng, n_tokens, a), random_sentence(rng, n_tokens, b), y)
        for (a, b), y in zip(lengths, labels)
    ]
    return next(make_batches(examples, model.embeddings, len(examples)))


def model_grad_error(model, batch, max_coords=None):
    from dsa.tensor import grad_check

    return grad_check(
        lambda: model.loss(batch)[0],
        model.parameters(),
        max_coords=max_coords,
        rng=np.random.default_rng(0),
    )


def sized_checkpoint(path, m, d_o, r=2, task="single", n_tokens=30, seed=0, hidden=()):
    """Checkpoint with a tiny encoder but the requested head layout."""
    from dsa.checkpoint import save_checkpoint

    config = ModelConfig(
        encoder=EncoderConfig(d0=8, d1=4, dl=3, L=2, k1=3, k2=5, dc=6),
        dsa=DsaConfig(m=m, d_o=d_o, r=r),
        classifier=ClassifierConfig(hidden=hidden, n_classes=3),
        task=task,
    )
    model = small_model(config, n_tokens=n_tokens, seed=seed)
    save_checkpoint(path, model, {"seed": seed, "oov_bound": 0.005})
    return path
