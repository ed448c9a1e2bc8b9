"""Convolutional word encoder with dense connections.

Two dense blocks with different kernel sizes run over the word embeddings.
Their outputs and the raw embeddings are concatenated, compressed by a
kernel-1 layer, and every column is scaled to unit length.

Shapes follow the ``[features, positions]`` convention with optional leading
batch axes: ``X0`` is ``[..., d0, n]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, DimensionError, EmptySequenceError
from .optim import he_init_scaled
from .tensor import (
    Tensor,
    concat,
    conv1d_same,
    dropout,
    l2_normalize_columns,
    leaky_relu,
)


@dataclass(frozen=True)
class EncoderConfig:
    d0: int = 300
    d1: int = 150
    dl: int = 75
    L: int = 4
    k1: int = 3
    k2: int = 5
    dc: int = 300
    dropout_rate: float = 0.2
    slope: float = 0.01

    def __post_init__(self):
        if self.L < 2:
            raise ConfigError(f"encoder needs L >= 2 layers per block, got {self.L}")
        for name in ("d0", "d1", "dl", "dc"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder.{name} must be positive")
        if self.k1 == self.k2:
            raise ConfigError("the two dense blocks need different kernel sizes")
        if self.k1 % 2 == 0 or self.k2 % 2 == 0 or min(self.k1, self.k2) < 1:
            raise ConfigError("kernel sizes must be positive and odd")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("encoder.dropout_rate must lie in [0, 1)")
        if not 0.0 < self.slope < 1.0:
            raise ConfigError("encoder.slope must lie in (0, 1)")

    def layer_in_dim(self, l: int) -> int:
        """Input rows of layer ``l`` (1-based) inside a block."""
        return self.d0 if l == 1 else self.d1 + (l - 2) * self.dl

    def layer_out_dim(self, l: int) -> int:
        return self.d1 if l == 1 else self.dl

    @property
    def block_out_dim(self) -> int:
        return self.d1 + (self.L - 1) * self.dl

    @property
    def compress_in_dim(self) -> int:
        return 2 * self.block_out_dim + self.d0

    @property
    def kernels(self) -> tuple[int, int]:
        return (self.k1, self.k2)


@dataclass
class ConvLayer:
    weight: Tensor  # [out, in, k]
    bias: Tensor  # [out]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class EncoderParams:
    blocks: list[list[ConvLayer]]
    compress: ConvLayer
    config: EncoderConfig = field(repr=False)

    def __post_init__(self):
        cfg = self.config
        if len(self.blocks) != 2:
            raise DimensionError("encoder needs exactly two dense blocks")
        for b, (block, k) in enumerate(zip(self.blocks, cfg.kernels), start=1):
            if len(block) != cfg.L:
                raise DimensionError(f"block{b} has {len(block)} layers, expected {cfg.L}")
            for l, layer in enumerate(block, start=1):
                want = (cfg.layer_out_dim(l), cfg.layer_in_dim(l), 1 if l == 1 else k)
                if layer.weight.shape != want or layer.bias.shape != (want[0],):
                    raise DimensionError(
                        f"block{b}.layer{l}: weight {layer.weight.shape} does not match {want}"
                    )
        want = (cfg.dc, cfg.compress_in_dim, 1)
        if self.compress.weight.shape != want:
            raise DimensionError(f"compress weight {self.compress.weight.shape} != {want}")

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for b, block in enumerate(self.blocks, start=1):
            for l, layer in enumerate(block, start=1):
                yield f"block{b}.layer{l}.conv.weight", layer.weight
                yield f"block{b}.layer{l}.conv.bias", layer.bias
        yield "compress.conv.weight", self.compress.weight
        yield "compress.conv.bias", self.compress.bias


def _conv_layer(out_dim, in_dim, k, rate, rng, dtype) -> ConvLayer:
    w = he_init_scaled((out_dim, in_dim, k), in_dim * k, rate or None, rng, dtype)
    return ConvLayer(
        Tensor(w, requires_grad=True),
        Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True),
    )


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> EncoderParams:
    rate = config.dropout_rate
    blocks = []
    for k in config.kernels:
        blocks.append(
            [
                _conv_layer(config.layer_out_dim(l), config.layer_in_dim(l), 1 if l == 1 else k, rate, rng, dtype)
                for l in range(1, config.L + 1)
            ]
        )
    compress = _conv_layer(config.dc, config.compress_in_dim, 1, rate, rng, dtype)
    return EncoderParams(blocks, compress, config)


def _apply_mask(X: Tensor, mask) -> Tensor:
    if mask is None:
        return X
    keep = np.asarray(mask, dtype=X.dtype)[..., None, :]
    return X * Tensor(keep)


def composite_layer(
    X: Tensor,
    layer: ConvLayer,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.0,
    slope: float = 0.01,
    mask=None,
) -> Tensor:
    """Convolution, dropout, then leaky ReLU; column count is preserved.

    When ``mask`` is given, padded columns are reset to zero afterwards so the
    next layer sees the same zero padding an unpadded sequence would.
    """
    h = conv1d_same(X, layer.weight, layer.bias)
    h = dropout(h, dropout_rate, rng, training)
    h = leaky_relu(h, slope)
    return _apply_mask(h, mask)


def dense_block(
    X0: Tensor,
    block: list[ConvLayer],
    config: EncoderConfig,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    mask=None,
) -> Tensor:
    """Returns ``concat[X^L, ..., X^1]`` along the feature axis."""
    kw = dict(training=training, rng=rng, dropout_rate=config.dropout_rate, slope=config.slope, mask=mask)
    outputs = [composite_layer(X0, block[0], **kw)]
    for layer in block[1:]:
        inp = outputs[0] if len(outputs) == 1 else concat(outputs[::-1], axis=-2)
        outputs.append(composite_layer(inp, layer, **kw))
    return concat(outputs[::-1], axis=-2)


def encode_words(
    X0: Tensor,
    params: EncoderParams,
    config: EncoderConfig | None = None,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    mask=None,
) -> Tensor:
    """Map word embeddings ``[..., d0, n]`` to unit columns ``[..., dc, n]``."""
    config = config or params.config
    if X0.shape[-1] == 0:
        raise EmptySequenceError("cannot encode an empty sequence")
    if X0.shape[-2] != config.d0:
        raise DimensionError(f"expected {config.d0} embedding rows, got {X0.shape[-2]}")
    X0 = _apply_mask(X0, mask)
    phi1 = dense_block(X0, params.blocks[0], config, training=training, rng=rng, mask=mask)
    phi2 = dense_block(X0, params.blocks[1], config, training=training, rng=rng, mask=mask)
    stacked = concat([phi1, phi2, X0], axis=-2)
    Xc = composite_layer(
        stacked,
        params.compress,
        training=training,
        rng=rng,
        dropout_rate=config.dropout_rate,
        slope=config.slope,
        mask=mask,
    )
    return l2_normalize_columns(Xc)
