"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable primitive builds a node holding its parents and a
closure mapping the output gradient to one gradient per parent. Calling
:func:`backward` orders the reachable nodes topologically (a :class:`Tape`)
and replays those closures in reverse.

Arrays are numpy ``float64`` unless ``float32`` data is passed in.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BatchSizeError,
    ConfigError,
    ContractError,
    DimensionError,
    EmptySequenceError,
    EvaluationError,
)

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """An n-d array that optionally tracks gradients.

    ``grad`` is only populated on tensors that require gradients and were
    reached by :func:`backward`; intermediate results keep no buffer.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = ""

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls(data, dtype=np.asarray(data).dtype)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators --------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(a, b) -> tuple[Tensor, Tensor]:
    """Wrap plain numbers/arrays so they match the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return a, b


# -----------------------------------------------------------------------------
# Tape and backward
# -----------------------------------------------------------------------------


class Tape:
    """Topologically ordered record of the nodes that lead to an output."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None]


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    if tape is None:
        tape = Tape.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# -----------------------------------------------------------------------------
# Elementwise and structural primitives
# -----------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor._from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor._from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    return Tensor._from_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    out = a.data / b.data
    return Tensor._from_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a: Tensor) -> Tensor:
    return Tensor._from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) / float(count)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor._from_op(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape"
    )


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return Tensor._from_op(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(a.data[index], (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._from_op(out, tensors, bw, "concat")


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Explicit-mode einsum (``'ij,jk->ik'``) with gradients for every operand.

    Ellipses and repeated indices within one operand are not supported.
    """
    if "->" not in subscripts or "." in subscripts:
        raise ContractError(f"unsupported einsum subscripts {subscripts!r}")
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(operands):
        raise DimensionError("einsum operand count does not match subscripts")
    for s in in_subs:
        if len(set(s)) != len(s):
            raise ContractError(f"repeated index in einsum operand {s!r}")
    arrays = [op.data for op in operands]
    try:
        out = np.einsum(subscripts, *arrays)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def bw(g):
        grads = []
        for i, sub_i in enumerate(in_subs):
            if not operands[i].requires_grad:
                grads.append(None)
                continue
            others = [s for j, s in enumerate(in_subs) if j != i]
            available = set(out_sub).union(*others) if others else set(out_sub)
            kept = "".join(c for c in sub_i if c in available)
            spec = ",".join([out_sub] + others) + "->" + kept
            gi = np.einsum(spec, g, *[arrays[j] for j in range(len(arrays)) if j != i])
            if kept != sub_i:
                # indices summed only inside this operand: broadcast back
                expand = [sub_i.index(c) for c in sub_i if c not in available]
                gi = np.broadcast_to(
                    np.expand_dims(gi, tuple(expand)), operands[i].shape
                ).copy()
            grads.append(gi)
        return grads

    return Tensor._from_op(out, operands, bw, "einsum")


def tanh_op(x: Tensor) -> Tensor:
    """Elementwise tanh, kept strictly inside (-1, 1).

    In double precision ``np.tanh`` rounds to exactly 1.0 past |x| ~ 19; the
    result is clamped to the nearest representable values inside the open
    interval so the range contract holds for every finite input.
    """
    y = np.tanh(x.data)
    edge = np.nextafter(x.data.dtype.type(1), x.data.dtype.type(0))
    y = np.clip(y, -edge, edge)
    return Tensor._from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor._from_op(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


# -----------------------------------------------------------------------------
# Layer primitives
# -----------------------------------------------------------------------------


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Column-wise ``W @ x[:, i] + b``; ``x`` may carry leading batch axes."""
    if W.ndim != 2 or b.ndim != 1 or x.ndim < 2:
        raise DimensionError("affine expects W [q,p], b [q], x [..., p, n]")
    q, p = W.shape
    if x.shape[-2] != p or b.shape[0] != q:
        raise DimensionError(
            f"affine shapes do not conform: W {W.shape}, b {b.shape}, x {x.shape}"
        )
    out = np.matmul(W.data, x.data) + b.data[:, None]

    def bw(g):
        gx = np.matmul(W.data.T, g)
        g3 = g.reshape(-1, q, g.shape[-1])
        x3 = x.data.reshape(-1, p, x.shape[-1])
        gW = np.einsum("bqn,bpn->qp", g3, x3)
        gb = g3.sum(axis=(0, 2))
        return gx, gW, gb

    return Tensor._from_op(out, (x, W, b), bw, "affine")


def conv1d_same(x: Tensor, K: Tensor, b: Tensor) -> Tensor:
    """1D convolution along the last axis with symmetric zero padding.

    ``x`` is ``[..., p, n]``, ``K`` is ``[q, p, k]`` with odd ``k``; output is
    ``[..., q, n]``. Position ``i`` sees columns ``i-k//2 .. i+k//2``.
    """
    if K.ndim != 3 or b.ndim != 1 or x.ndim < 2:
        raise DimensionError("conv1d_same expects x [..., p, n], K [q, p, k], b [q]")
    q, p, k = K.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same requires an odd kernel size, got {k}")
    if x.shape[-2] != p or b.shape[0] != q:
        raise DimensionError(f"conv1d_same shapes do not conform: x {x.shape}, K {K.shape}")
    n = x.shape[-1]
    if n < 1:
        raise EmptySequenceError("conv1d_same on a zero-length sequence")
    lead = x.shape[:-2]
    pad = k // 2
    xb = x.data.reshape(-1, p, n)
    nb = xb.shape[0]
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)  # [B, p, n, k]
    cols = windows.transpose(0, 2, 1, 3).reshape(nb, n, p * k)
    Kf = K.data.reshape(q, p * k)
    out = np.matmul(cols, Kf.T).transpose(0, 2, 1) + b.data[:, None]

    def bw(g):
        gb3 = g.reshape(nb, q, n)
        gK = np.matmul(gb3.transpose(1, 0, 2).reshape(q, nb * n), cols.reshape(nb * n, p * k))
        gcols = np.matmul(gb3.transpose(0, 2, 1), Kf).reshape(nb, n, p, k)
        gxp = np.zeros((nb, p, n + 2 * pad), dtype=g.dtype)
        for t in range(k):
            gxp[:, :, t : t + n] += gcols[:, :, :, t].transpose(0, 2, 1)
        gx = gxp[:, :, pad : pad + n].reshape(x.shape)
        return gx, gK.reshape(K.shape), gb3.sum(axis=(0, 2))

    return Tensor._from_op(out.reshape(lead + (q, n)), (x, K, b), bw, "conv1d_same")


def masked_softmax(q: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` where ``mask`` (broadcastable) marks valid entries.

    Invalid entries get weight exactly 0. Every slice needs at least one valid
    entry.
    """
    logits = q.data
    if mask is not None:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        if not valid.any(axis=axis).all():
            raise EmptySequenceError("softmax over a slice with no valid positions")
        logits = np.where(valid, logits, -np.inf)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    a = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (a * (g - (g * a).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(a, (q,), bw, "softmax")


def softmax_over_positions(q: Tensor, mask=None) -> Tensor:
    """Column-wise softmax of ``q`` ``[..., n, m]`` over positions ``n``.

    ``mask`` is ``[..., n]``; masked rows get weight 0 in every column.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[..., :, None]
    return masked_softmax(q, mask, axis=-2)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` at train time."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


dropout_train = dropout


def l2_normalize_columns(X: Tensor, eps: float = 1e-12, axis: int = -2) -> Tensor:
    """Scale each column (slice along ``axis``) to unit L2 norm.

    Columns whose norm is below ``eps`` pass through unchanged.
    """
    norm = np.sqrt((X.data * X.data).sum(axis=axis, keepdims=True))
    small = norm < eps
    safe = np.where(small, 1.0, norm)
    y = X.data / safe

    def bw(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        gx = np.where(small, g, (g - y * proj) / safe)
        return (gx,)

    return Tensor._from_op(y, (X,), bw, "l2_normalize")


class BatchNormState:
    """Running statistics for :func:`batch_norm_1d`."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm_1d(
    x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool
) -> Tensor:
    """Normalize features (rows) of ``x`` ``[f, B]`` across the batch (columns)."""
    if x.ndim != 2 or gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise DimensionError(f"batch_norm_1d: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    f, B = x.shape
    if training:
        if B < 2:
            raise BatchSizeError(f"batch norm in training mode needs B >= 2, got {B}")
        mu = x.data.mean(axis=1)
        var = x.data.var(axis=1)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * B / (B - 1)
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu[:, None]) * inv[:, None]
    out = gamma.data[:, None] * xhat + beta.data[:, None]

    def bw(g):
        ggamma = (g * xhat).sum(axis=1)
        gbeta = g.sum(axis=1)
        gxhat = g * gamma.data[:, None]
        if training:
            gx = (inv[:, None] / B) * (
                B * gxhat
                - gxhat.sum(axis=1, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=1, keepdims=True)
            )
        else:
            gx = gxhat * inv[:, None]
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), bw, "batch_norm")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over columns of ``-log softmax(logits[:, b])[labels[b]]``."""
    z = logits.data
    C, B = z.shape
    shifted = z - z.max(axis=0, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    logp = shifted - logsum
    cols = np.arange(B)
    loss = -logp[labels, cols].mean()

    def bw(g):
        p = np.exp(logp)
        p[labels, cols] -= 1.0
        return (p * (g / B),)

    return Tensor._from_op(np.asarray(loss, dtype=z.dtype), (logits,), bw, "cross_entropy")


# -----------------------------------------------------------------------------
# Finite-difference gradient check
# -----------------------------------------------------------------------------


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``f`` is re-evaluated with each sampled coordinate of ``params`` nudged by
    ``±h`` in place. The error for one coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    ``f`` must be deterministic (e.g. eval-mode dropout).
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise EvaluationError("f(theta) is not finite")
    backward(loss)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + h
                fp = float(f().data)
                flat[c] = orig - h
                fm = float(f().data)
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError("f is not finite near theta")
            numeric = (fp - fm) / (2 * h)
            a = float(analytic.reshape(-1)[c])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst
