"""Dynamic self-attention and the static self-attention baseline.

Layouts (leading batch axis optional):

* projected words ``xhat``: ``[B, m, d_o, n]``
* routing logits / weights: ``[B, n, m]``
* dynamic vectors ``Z``: ``[B, m, d_o]``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, EmptySequenceError
from .optim import he_init_scaled
from .tensor import (
    Tensor,
    add,
    einsum,
    leaky_relu,
    masked_softmax,
    reshape,
    softmax_over_positions,
    tanh_op,
)


@dataclass(frozen=True)
class DsaConfig:
    m: int = 1
    d_o: int = 600
    r: int = 2

    def __post_init__(self):
        if self.m < 1 or self.d_o < 1 or self.r < 1:
            raise ConfigError(f"DSA needs m, d_o, r >= 1 (got m={self.m}, d_o={self.d_o}, r={self.r})")

    @property
    def out_dim(self) -> int:
        return self.m * self.d_o


@dataclass
class DsaParams:
    """Per-head projections stacked along the first axis."""

    weight: Tensor  # [m, d_o, d_c]
    bias: Tensor  # [m, d_o]

    def __post_init__(self):
        if self.weight.ndim != 3 or self.bias.shape != self.weight.shape[:2]:
            raise DimensionError(f"DSA weight {self.weight.shape} / bias {self.bias.shape} mismatch")

    @property
    def m(self) -> int:
        return self.weight.shape[0]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "dsa.proj.weight", self.weight
        yield "dsa.proj.bias", self.bias


def init_dsa_params(config: DsaConfig, dc: int, rng: np.random.Generator, dtype=np.float64) -> DsaParams:
    w = he_init_scaled((config.m, config.d_o, dc), dc, None, rng, dtype)
    return DsaParams(
        Tensor(w, requires_grad=True),
        Tensor(np.zeros((config.m, config.d_o), dtype=dtype), requires_grad=True),
    )


@dataclass
class AttentionTrace:
    """Per-iteration routing state, detached from the graph.

    ``logits[t]`` holds the logits the weights of iteration ``t`` were computed
    from; ``weights[t]`` and ``z[t]`` are that iteration's outputs.
    """

    logits: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    z: list[np.ndarray] = field(default_factory=list)
    mask: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.weights)

    @property
    def batched(self) -> bool:
        return bool(self.weights) and self.weights[0].ndim == 3

    def sentence(self, b: int) -> "AttentionTrace":
        """Trace of one batch item, cropped to its valid positions."""
        if not self.batched:
            raise ContractError("trace is not batched")
        keep = slice(None) if self.mask is None else self.mask[b]
        return AttentionTrace(
            logits=[q[b][keep] for q in self.logits],
            weights=[a[b][keep] for a in self.weights],
            z=[z[b] for z in self.z],
            mask=None,
        )


def project_heads(Xc: Tensor, params: DsaParams, slope: float = 0.01) -> Tensor:
    """``LeakyReLU(W_j x_i + b_j)`` for every head ``j`` and position ``i``."""
    if Xc.shape[-2] != params.weight.shape[2]:
        raise DimensionError(f"projection expects {params.weight.shape[2]} rows, got {Xc.shape[-2]}")
    if Xc.ndim == 2:
        lin = einsum("jod,dn->jon", params.weight, Xc)
    elif Xc.ndim == 3:
        lin = einsum("jod,bdn->bjon", params.weight, Xc)
    else:
        raise DimensionError(f"project_heads expects [d_c, n] or [B, d_c, n], got {Xc.shape}")
    bias = reshape(params.bias, params.bias.shape + (1,))
    return leaky_relu(add(lin, bias), slope)


def _check_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionError(f"mask shape {mask.shape} does not match {shape}")
    if not mask.any(axis=-1).all():
        raise EmptySequenceError("attention over a sequence with no valid positions")
    return mask


def dsa_routing(
    xhat: Tensor, mask=None, r: int = 2, keep_trace: bool = False
) -> tuple[Tensor, AttentionTrace | None]:
    """Iteratively re-weight positions by agreement with a dynamic vector.

    Starting from zero logits, each of the ``r`` iterations takes a masked
    softmax over positions, forms the weighted sum of each head's projected
    words, squashes it with tanh into the dynamic vector ``z``, and adds the
    agreement ``xhat . z`` to the logits. Gradients flow through every
    iteration. Returns the final ``z`` (``[..., m, d_o]``) and, optionally,
    the trace.
    """
    if r < 1:
        raise ConfigError(f"routing needs r >= 1, got {r}")
    batched = xhat.ndim == 4
    if xhat.ndim not in (3, 4):
        raise DimensionError(f"xhat must be [m, d_o, n] or [B, m, d_o, n], got {xhat.shape}")
    lead = xhat.shape[:1] if batched else ()
    m, n = xhat.shape[-3], xhat.shape[-1]
    mask = _check_mask(mask, lead + (n,))
    b = "b" if batched else ""
    q = Tensor(np.zeros(lead + (n, m), dtype=xhat.dtype))
    trace = AttentionTrace(mask=mask if batched else None) if keep_trace else None
    z = None
    for _ in range(r):
        a = softmax_over_positions(q, mask)
        s = einsum(f"{b}jon,{b}nj->{b}jo", xhat, a)
        z = tanh_op(s)
        if trace is not None:
            trace.logits.append(q.data.copy())
            trace.weights.append(a.data.copy())
            trace.z.append(z.data.copy())
        q = add(q, einsum(f"{b}jon,{b}jo->{b}nj", xhat, z))
    return z, trace


def concat_heads(Z: Tensor) -> Tensor:
    """``[..., m, d_o]`` to ``[..., m*d_o]`` with heads in ascending order."""
    return reshape(Z, Z.shape[:-2] + (Z.shape[-2] * Z.shape[-1],))


def extract_dynamic_weight_vector(trace: AttentionTrace, head: int = 0) -> np.ndarray:
    """The vector ``z_j`` from iteration ``r-1``, which weights the last pass."""
    if trace.iterations < 2:
        raise ContractError("the dynamic weight vector needs at least r = 2 iterations")
    return trace.z[-2][..., head, :]


@dataclass
class StaticAttnParams:
    W: Tensor  # [d_v, d_w]
    v: Tensor  # [d_v]

    def named_parameters(self, prefix: str = "static") -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.W", self.W
        yield f"{prefix}.v", self.v


def init_static_params(d_v: int, d_w: int, rng: np.random.Generator, dtype=np.float64) -> StaticAttnParams:
    return StaticAttnParams(
        Tensor(he_init_scaled((d_v, d_w), d_w, None, rng, dtype), requires_grad=True),
        Tensor(he_init_scaled((d_v,), d_v, None, rng, dtype), requires_grad=True),
    )


def static_self_attention(
    X: Tensor, params: StaticAttnParams, mask=None
) -> tuple[Tensor, Tensor]:
    """Score positions with a fixed learned vector: ``softmax(v . tanh(W X))``.

    Returns the weighted sum of the columns of ``X`` (``[..., d_w]``) and the
    weights (``[..., n]``).
    """
    batched = X.ndim == 3
    lead = X.shape[:1] if batched else ()
    mask = _check_mask(mask, lead + (X.shape[-1],))
    b = "b" if batched else ""
    hidden = tanh_op(einsum(f"vw,{b}wn->{b}vn", params.W, X))
    scores = einsum(f"v,{b}vn->{b}n", params.v, hidden)
    a = masked_softmax(scores, mask, axis=-1)
    return einsum(f"{b}wn,{b}n->{b}w", X, a), a
