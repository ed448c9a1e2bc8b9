"""Sentence encoder model and its pair / single-sentence classifier heads."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .attention import (
    AttentionTrace,
    DsaConfig,
    DsaParams,
    StaticAttnParams,
    concat_heads,
    dsa_routing,
    init_dsa_params,
    init_static_params,
    project_heads,
    static_self_attention,
)
from .data import Batch, EmbeddingTable
from .encoder import EncoderConfig, EncoderParams, encode_words, init_encoder_params
from .errors import ConfigError, ContractError, DimensionError, EmptySequenceError
from .optim import he_init_scaled
from .tensor import (
    BatchNormState,
    Tensor,
    absolute,
    affine,
    batch_norm_1d,
    concat,
    dropout,
    leaky_relu,
    no_grad,
    reshape,
    softmax_cross_entropy,
    transpose,
)

TASKS = ("pair", "single")
ATTENTION_KINDS = ("dsa", "static")


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: tuple[int, ...] = (300, 300)
    dropout_rate: float = 0.3
    n_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")
        if self.n_classes < 2:
            raise ConfigError("classifier needs at least 2 classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("classifier.dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dsa: DsaConfig = field(default_factory=DsaConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    task: str = "pair"
    attention: str = "dsa"
    embed_dropout: float = 0.3
    static_dv: int = 0  # 0 means "same as d_o"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if not 0.0 <= self.embed_dropout < 1.0:
            raise ConfigError("model.embed_dropout must lie in [0, 1)")
        if self.static_dv < 0:
            raise ConfigError("model.static_dv must be >= 0")

    @property
    def sentence_dim(self) -> int:
        return self.dsa.m * self.dsa.d_o

    @property
    def feature_dim(self) -> int:
        return 4 * self.sentence_dim if self.task == "pair" else self.sentence_dim

    @property
    def dv(self) -> int:
        return self.static_dv or self.dsa.d_o


# -----------------------------------------------------------------------------
# Classifier
# -----------------------------------------------------------------------------


@dataclass
class HiddenLayer:
    bn_gamma: Tensor
    bn_beta: Tensor
    bn_state: BatchNormState
    weight: Tensor
    bias: Tensor


@dataclass
class ClassifierParams:
    hidden: list[HiddenLayer]
    out_weight: Tensor
    out_bias: Tensor

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.hidden, start=1):
            yield f"classifier.hidden{i}.bn.weight", layer.bn_gamma
            yield f"classifier.hidden{i}.bn.bias", layer.bn_beta
            yield f"classifier.hidden{i}.linear.weight", layer.weight
            yield f"classifier.hidden{i}.linear.bias", layer.bias
        yield "classifier.out.weight", self.out_weight
        yield "classifier.out.bias", self.out_bias

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.hidden, start=1):
            yield f"classifier.hidden{i}.bn.running_mean", layer.bn_state.running_mean
            yield f"classifier.hidden{i}.bn.running_var", layer.bn_state.running_var


def init_classifier_params(
    config: ClassifierConfig, in_dim: int, rng: np.random.Generator, dtype=np.float64
) -> ClassifierParams:
    layers = []
    prev = in_dim
    for width in config.hidden:
        rate = config.dropout_rate or None
        layers.append(
            HiddenLayer(
                bn_gamma=Tensor(np.ones(prev, dtype=dtype), requires_grad=True),
                bn_beta=Tensor(np.zeros(prev, dtype=dtype), requires_grad=True),
                bn_state=BatchNormState(prev, dtype=dtype),
                weight=Tensor(he_init_scaled((width, prev), prev, rate, rng, dtype), requires_grad=True),
                bias=Tensor(np.zeros(width, dtype=dtype), requires_grad=True),
            )
        )
        prev = width
    out_w = he_init_scaled((config.n_classes, prev), prev, None, rng, dtype)
    return ClassifierParams(
        layers,
        Tensor(out_w, requires_grad=True),
        Tensor(np.zeros(config.n_classes, dtype=dtype), requires_grad=True),
    )


def heuristic_match_features(sh: Tensor, sp: Tensor) -> Tensor:
    """``concat[sh, sp, |sh - sp|, sh * sp]`` along the last axis."""
    if sh.shape != sp.shape:
        raise DimensionError(f"sentence vectors differ in shape: {sh.shape} vs {sp.shape}")
    return concat([sh, sp, absolute(sh - sp), sh * sp], axis=-1)


def mlp_classify(
    features: Tensor,
    params: ClassifierParams,
    *,
    dropout_rate: float = 0.0,
    slope: float = 0.01,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits ``[C, B]`` for features ``[D, B]`` (or ``[C]`` for a single ``[D]``).

    Each hidden layer runs batch norm, dropout, affine, leaky ReLU on its
    input; the output layer is a plain affine map.
    """
    single = features.ndim == 1
    h = reshape(features, (features.shape[0], 1)) if single else features
    expected = params.hidden[0].weight.shape[1] if params.hidden else params.out_weight.shape[1]
    if h.shape[0] != expected:
        raise DimensionError(f"classifier expects {expected} features, got {h.shape[0]}")
    for layer in params.hidden:
        h = batch_norm_1d(h, layer.bn_gamma, layer.bn_beta, layer.bn_state, training)
        h = dropout(h, dropout_rate, rng, training)
        h = leaky_relu(affine(h, layer.weight, layer.bias), slope)
    logits = affine(h, params.out_weight, params.out_bias)
    return reshape(logits, (logits.shape[0],)) if single else logits


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under column-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[1] != labels.shape[0]:
        raise DimensionError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    C = logits.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ContractError(f"labels must lie in [0, {C})")
    return softmax_cross_entropy(logits, labels)


# -----------------------------------------------------------------------------
# Parameter accounting
# -----------------------------------------------------------------------------


def _conv_count(in_dim: int, out_dim: int, k: int) -> int:
    return in_dim * out_dim * k + out_dim


def param_breakdown(config: ModelConfig) -> dict[str, int]:
    """Trainable scalar counts per component; word embeddings are excluded.

    ``encoder_subtotal`` covers both dense blocks, the compression layer and
    the per-head projection.
    """
    enc, dsa, clf = config.encoder, config.dsa, config.classifier
    out: dict[str, int] = {}
    for name, k in (("block_k1", enc.k1), ("block_k2", enc.k2)):
        out[name] = sum(
            _conv_count(enc.layer_in_dim(l), enc.layer_out_dim(l), 1 if l == 1 else k)
            for l in range(1, enc.L + 1)
        )
    out["compression"] = _conv_count(enc.compress_in_dim, enc.dc, 1)
    out["projection"] = dsa.m * (dsa.d_o * enc.dc + dsa.d_o)
    out["encoder_subtotal"] = out["block_k1"] + out["block_k2"] + out["compression"] + out["projection"]
    out["static_attention"] = dsa.m * (config.dv * dsa.d_o + config.dv) if config.attention == "static" else 0
    clf_count = 0
    prev = config.feature_dim
    for width in clf.hidden:
        clf_count += 2 * prev + prev * width + width
        prev = width
    clf_count += prev * clf.n_classes + clf.n_classes
    out["classifier"] = clf_count
    out["total"] = out["encoder_subtotal"] + out["static_attention"] + out["classifier"]
    return out


def param_count(config: ModelConfig) -> int:
    return param_breakdown(config)["total"]


# -----------------------------------------------------------------------------
# Model
# -----------------------------------------------------------------------------


class DsaModel:
    """Encoder, attention and classifier parameters plus the frozen embeddings."""

    def __init__(
        self,
        config: ModelConfig,
        embeddings: EmbeddingTable,
        encoder: EncoderParams,
        dsa: DsaParams,
        classifier: ClassifierParams,
        static: list[StaticAttnParams] | None = None,
        dtype=np.float64,
    ):
        if embeddings.dim != config.encoder.d0:
            raise ConfigError(f"embeddings have dim {embeddings.dim}, encoder expects d0={config.encoder.d0}")
        self.config = config
        self.embeddings = embeddings
        self.encoder = encoder
        self.dsa = dsa
        self.classifier = classifier
        self.static = static or []
        self.dtype = np.dtype(dtype)

    @classmethod
    def init(
        cls, config: ModelConfig, embeddings: EmbeddingTable, rng: np.random.Generator, dtype=np.float64
    ) -> "DsaModel":
        encoder = init_encoder_params(config.encoder, rng, dtype)
        dsa = init_dsa_params(config.dsa, config.encoder.dc, rng, dtype)
        static = None
        if config.attention == "static":
            static = [init_static_params(config.dv, config.dsa.d_o, rng, dtype) for _ in range(config.dsa.m)]
        classifier = init_classifier_params(config.classifier, config.feature_dim, rng, dtype)
        return cls(config, embeddings, encoder, dsa, classifier, static, dtype)

    # -- parameters --

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from (("encoder." + n, p) for n, p in self.encoder.named_parameters())
        yield from self.dsa.named_parameters()
        for j, sp in enumerate(self.static):
            yield from sp.named_parameters(f"static.head{j + 1}")
        yield from self.classifier.named_parameters()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.classifier.named_buffers()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- forward --

    def embed(self, sentences: Sequence[Sequence[str]]) -> tuple[np.ndarray, np.ndarray]:
        from .data import pad_sequences

        if any(len(s) == 0 for s in sentences):
            raise EmptySequenceError("cannot encode an empty sentence")
        return pad_sequences(self.embeddings, sentences, self.dtype)

    def encode_batch(
        self,
        x: np.ndarray,
        mask: np.ndarray,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
        keep_trace: bool = False,
    ) -> tuple[Tensor, AttentionTrace | None]:
        """Sentence embeddings ``[B, m*d_o]`` for padded embeddings ``[B, d0, n]``."""
        cfg = self.config
        X0 = dropout(Tensor(x, dtype=self.dtype), cfg.embed_dropout, rng, training)
        Xc = encode_words(X0, self.encoder, cfg.encoder, training=training, rng=rng, mask=mask)
        xhat = project_heads(Xc, self.dsa, cfg.encoder.slope)
        if cfg.attention == "static":
            heads = []
            weights = []
            for j, sp in enumerate(self.static):
                vec, a = static_self_attention(xhat[:, j], sp, mask)
                heads.append(reshape(vec, (vec.shape[0], 1, vec.shape[1])))
                weights.append(a.data)
            Z = concat(heads, axis=1)
            trace = None
            if keep_trace:
                trace = AttentionTrace(weights=[np.stack(weights, axis=-1)], z=[Z.data.copy()], mask=mask)
        else:
            Z, trace = dsa_routing(xhat, mask, cfg.dsa.r, keep_trace=keep_trace)
        return concat_heads(Z), trace

    def logits(
        self, batch: Batch, *, training: bool = False, rng: np.random.Generator | None = None
    ) -> Tensor:
        """Classifier logits ``[C, B]`` for a batch."""
        cfg = self.config
        if cfg.task == "pair":
            if batch.x2 is None:
                raise ContractError("pair model needs a pair batch")
            sp, _ = self.encode_batch(batch.x, batch.mask, training=training, rng=rng)
            sh, _ = self.encode_batch(batch.x2, batch.mask2, training=training, rng=rng)
            features = heuristic_match_features(sh, sp)
        else:
            features, _ = self.encode_batch(batch.x, batch.mask, training=training, rng=rng)
        return mlp_classify(
            transpose(features),
            self.classifier,
            dropout_rate=cfg.classifier.dropout_rate,
            slope=cfg.encoder.slope,
            training=training,
            rng=rng,
        )

    def loss(self, batch: Batch, *, training: bool = False, rng=None) -> tuple[Tensor, np.ndarray]:
        logits = self.logits(batch, training=training, rng=rng)
        return cross_entropy_loss(logits, batch.labels), logits.data.argmax(axis=0)

    def predict(self, batch: Batch) -> np.ndarray:
        with no_grad():
            return self.logits(batch).data.argmax(axis=0)

    def encode_sentences(
        self, sentences: Sequence[Sequence[str]], keep_trace: bool = False
    ) -> tuple[np.ndarray, AttentionTrace | None]:
        """Eval-mode embeddings ``[N, m*d_o]`` for tokenized sentences."""
        x, mask = self.embed(sentences)
        with no_grad():
            z, trace = self.encode_batch(x, mask, keep_trace=keep_trace)
        return z.data, trace


def encode_sentence(
    tokens: Sequence[str],
    model: DsaModel,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    keep_trace: bool = True,
) -> tuple[Tensor, AttentionTrace | None]:
    """Embed one tokenized sentence: ``[m*d_o]`` vector and its routing trace."""
    if not tokens:
        raise EmptySequenceError("cannot encode an empty sentence")
    x, mask = model.embed([tokens])
    z, trace = model.encode_batch(x, mask, training=training, rng=rng, keep_trace=keep_trace)
    if trace is not None:
        trace = trace.sentence(0)
    return reshape(z, (z.shape[-1],)), trace
