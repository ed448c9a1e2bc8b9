import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsa.errors import (
    BatchSizeError,
    ConfigError,
    ContractError,
    DimensionError,
    EmptySequenceError,
    EvaluationError,
)
from dsa.tensor import (
    BatchNormState,
    Tape,
    Tensor,
    absolute,
    affine,
    backward,
    batch_norm_1d,
    concat,
    conv1d_same,
    dropout,
    einsum,
    grad_check,
    l2_normalize_columns,
    leaky_relu,
    masked_softmax,
    mean,
    no_grad,
    reshape,
    softmax_cross_entropy,
    softmax_over_positions,
    tanh_op,
    transpose,
)


def naive_conv(x, K, b):
    """Direct sliding-window convolution with explicit zero padding."""
    q, p, k = K.shape
    n = x.shape[1]
    half = k // 2
    out = np.zeros((q, n))
    for o in range(q):
        for i in range(n):
            acc = b[o]
            for c in range(p):
                for t in range(k):
                    j = i - half + t
                    if 0 <= j < n:
                        acc += K[o, c, t] * x[c, j]
            out[o, i] = acc
    return out


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# -- affine ------------------------------------------------------------------


def test_affine_identity():
    out = affine(Tensor([[1.0], [2.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(out.data, [[1.0], [2.0]])


def test_affine_zero_weight():
    out = affine(Tensor(np.random.default_rng(0).normal(size=(2, 1))), Tensor(np.zeros((2, 2))), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_affine_hand_matvec():
    out = affine(Tensor([[1.0], [1.0]]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_affine_shape_mismatch():
    with pytest.raises(DimensionError):
        affine(Tensor(np.ones((3, 1))), Tensor(np.eye(2)), Tensor(np.zeros(2)))


# -- conv1d_same -------------------------------------------------------------


def test_conv_identity_kernel_k1():
    x = np.random.default_rng(1).normal(size=(3, 6))
    K = np.eye(3)[:, :, None]
    out = conv1d_same(Tensor(x), Tensor(K), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_centered_delta():
    out = conv1d_same(Tensor([[5.0, 6.0, 7.0]]), Tensor([[[0.0, 1.0, 0.0]]]), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, [[5.0, 6.0, 7.0]])


def test_conv_box_kernel():
    out = conv1d_same(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 1.0, 1.0]]]), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, [[3.0, 6.0, 5.0]])


def test_conv_even_kernel_rejected():
    with pytest.raises(ConfigError):
        conv1d_same(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 1, 2))), Tensor([0.0]))


@settings(max_examples=60, deadline=None)
@given(
    p=st.integers(1, 8),
    q=st.integers(1, 8),
    k=st.sampled_from([1, 3, 5]),
    n=st.integers(1, 32),
    seed=st.integers(0, 2**31 - 1),
)
def test_conv_matches_direct_loop(p, q, k, n, seed):
    rng = np.random.default_rng(seed)
    x, K, b = rng.normal(size=(p, n)), rng.normal(size=(q, p, k)), rng.normal(size=q)
    out = conv1d_same(Tensor(x), Tensor(K), Tensor(b))
    assert out.shape == (q, n)
    np.testing.assert_allclose(out.data, naive_conv(x, K, b), atol=1e-10, rtol=0)


def test_conv_batched_equals_per_item():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 3, 9))
    K, b = rng.normal(size=(5, 3, 3)), rng.normal(size=5)
    out = conv1d_same(Tensor(x), Tensor(K), Tensor(b)).data
    for i in range(4):
        np.testing.assert_allclose(out[i], naive_conv(x[i], K, b), atol=1e-10, rtol=0)


# -- leaky_relu / tanh -------------------------------------------------------


def test_leaky_relu_values():
    out = leaky_relu(Tensor([0.0, 3.0, -2.0]), 0.01)
    np.testing.assert_allclose(out.data, [0.0, 3.0, -0.02], rtol=0, atol=1e-15)


def test_leaky_relu_slope_validated():
    with pytest.raises(ConfigError):
        leaky_relu(Tensor([1.0]), 1.5)


def test_tanh_values():
    out = tanh_op(Tensor([0.0, 100.0, 1.5]))
    assert out.data[0] == 0.0
    assert abs(out.data[1] - 1.0) < 1e-12
    assert math.isclose(out.data[2], 0.90514825364486644, abs_tol=1e-15)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_tanh_strictly_inside_open_interval(v):
    y = tanh_op(Tensor([v])).data[0]
    assert -1.0 < y < 1.0


# -- softmax -----------------------------------------------------------------


def test_softmax_uniform_from_zeros():
    a = softmax_over_positions(Tensor(np.zeros((4, 2))), np.ones(4, bool))
    np.testing.assert_array_equal(a.data, np.full((4, 2), 0.25))


def test_softmax_singleton():
    a = softmax_over_positions(Tensor([[37.0, -5.0]]))
    np.testing.assert_array_equal(a.data, [[1.0, 1.0]])


def test_softmax_exp_ratio():
    a = softmax_over_positions(Tensor([[math.log(1.0)], [math.log(3.0)]]), np.ones(2, bool))
    np.testing.assert_allclose(a.data[:, 0], [0.25, 0.75], atol=1e-15)


def test_softmax_all_masked_raises():
    with pytest.raises(EmptySequenceError):
        softmax_over_positions(Tensor(np.zeros((3, 1))), np.zeros(3, bool))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 64), m=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_softmax_columns_sum_to_one(n, m, seed):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-50, 50, size=(n, m))
    mask = rng.random(n) < 0.7
    mask[rng.integers(n)] = True
    a = softmax_over_positions(Tensor(q), mask).data
    np.testing.assert_allclose(a[mask].sum(axis=0), 1.0, atol=1e-9, rtol=0)
    assert np.all(a[~mask] == 0.0)
    assert np.all(a[mask] >= 0.0)


# -- dropout -----------------------------------------------------------------


def test_dropout_rate_zero_and_eval_are_identity():
    x = Tensor(np.random.default_rng(3).normal(size=(5, 5)))
    assert dropout(x, 0.0, np.random.default_rng(0), training=True) is x
    assert dropout(x, 0.7, np.random.default_rng(0), training=False) is x


def test_dropout_frequency():
    x = Tensor(np.ones(100_000))
    out = dropout(x, 0.5, np.random.default_rng(7), training=True).data
    zero_frac = np.mean(out == 0.0)
    assert abs(zero_frac - 0.5) < 0.05
    np.testing.assert_array_equal(np.unique(out), [0.0, 2.0])


def test_dropout_rate_one_rejected():
    with pytest.raises(ConfigError):
        dropout(Tensor([1.0]), 1.0, np.random.default_rng(0))


# -- l2 normalization ----------------------------------------------------------


def test_l2_normalize_examples():
    X = Tensor([[3.0, 1.0, 0.0], [4.0, 0.0, 0.0]])
    out = l2_normalize_columns(X, eps=1e-12).data
    np.testing.assert_allclose(out[:, 0], [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(out[:, 1], [1.0, 0.0])
    np.testing.assert_array_equal(out[:, 2], [0.0, 0.0])


@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 8), n=st.integers(1, 8))
def test_l2_normalize_idempotent(seed, d, n):
    X = Tensor(np.random.default_rng(seed).normal(size=(d, n)) * 10)
    once = l2_normalize_columns(X)
    twice = l2_normalize_columns(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-12, rtol=0)


# -- batch norm ----------------------------------------------------------------


def test_batch_norm_standardized_passthrough():
    x = np.array([[1.0, -1.0, 1.0, -1.0], [0.5, -0.5, 1.5, -1.5]])
    x = (x - x.mean(1, keepdims=True)) / x.std(1, keepdims=True)
    state = BatchNormState(2)
    out = batch_norm_1d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state, training=True)
    np.testing.assert_allclose(out.data, x, atol=1e-5)


def test_batch_norm_zero_scale():
    state = BatchNormState(2)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5)))
    out = batch_norm_1d(x, Tensor(np.zeros(2)), Tensor([0.3, -1.0]), state, training=True)
    np.testing.assert_array_equal(out.data, np.array([[0.3] * 5, [-1.0] * 5]))


def test_batch_norm_hand_values():
    state = BatchNormState(1, eps=1e-5)
    out = batch_norm_1d(Tensor([[1.0, 3.0]]), Tensor([1.0]), Tensor([0.0]), state, training=True)
    # mean 2, biased var 1
    expected = 1.0 / math.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out.data, [[-expected, expected]], atol=1e-12)
    np.testing.assert_allclose(state.running_mean, [0.2])
    np.testing.assert_allclose(state.running_var, [0.9 + 0.1 * 2.0])


def test_batch_norm_eval_uses_running_stats():
    state = BatchNormState(1)
    state.running_mean[:] = 2.0
    state.running_var[:] = 4.0 - state.eps
    out = batch_norm_1d(Tensor([[4.0]]), Tensor([1.0]), Tensor([0.0]), state, training=False)
    np.testing.assert_allclose(out.data, [[1.0]], atol=1e-12)


def test_batch_norm_needs_two_in_training():
    with pytest.raises(BatchSizeError):
        batch_norm_1d(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]), BatchNormState(1), training=True)


# -- backward --------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_quadratic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_accumulates_over_shared_subgraph():
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    backward((y + y * x).sum())  # 2x^2... d/dx (x^2 + x^3) = 2x + 3x^2
    np.testing.assert_allclose(x.grad, [6.0 + 27.0])


def test_tape_topological_order():
    a = Tensor([1.0], requires_grad=True)
    b = a * 2.0
    c = b + a
    d = (c * b).sum()
    tape = Tape.from_output(d)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for node in tape.nodes:
        for parent in node._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(node)]
    assert len({id(n) for n in tape.nodes}) == len(tape.nodes)
    assert tape.leaves() == [a]


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._parents == ()


# -- gradient checks for every primitive --------------------------------------------


def _rand_mask(rng, shape):
    mask = rng.random(shape) < 0.7
    mask[..., 0] = True
    return mask


PRIMITIVES = {
    "add_broadcast": lambda r: ([p := param(r, 3, 4), q := param(r, 4)], lambda: ((p + q) * (p + q)).sum()),
    "sub_div": lambda r: (
        [p := param(r, 3), q := Tensor(r.uniform(1, 2, 3), requires_grad=True)],
        lambda: ((p - q) / q).sum(),
    ),
    "mean_reshape_neg": lambda r: (
        [p := param(r, 2, 6)],
        lambda: mean(reshape(-p, (3, 4)) * Tensor(np.arange(12.0).reshape(3, 4)), axis=0).sum(),
    ),
    "abs": lambda r: ([p := param(r, 5)], lambda: (absolute(p) * p).sum()),
    "transpose_getitem": lambda r: ([p := param(r, 3, 4)], lambda: (transpose(p)[1:3] * transpose(p)[1:3]).sum()),
    "concat": lambda r: (
        [p := param(r, 2, 3), q := param(r, 4, 3)],
        lambda: (concat([p, q], axis=0) * Tensor(np.arange(18.0).reshape(6, 3))).sum(),
    ),
    "einsum": lambda r: (
        [p := param(r, 2, 3, 4), q := param(r, 3, 4)],
        lambda: tanh_op(einsum("bjn,jn->bj", p, q)).sum(),
    ),
    "einsum_lone_index": lambda r: ([p := param(r, 3, 4)], lambda: (einsum("ij->i", p) * Tensor([1.0, 2.0, 3.0])).sum()),
    "tanh": lambda r: ([p := param(r, 6)], lambda: (tanh_op(p) * Tensor(np.arange(6.0))).sum()),
    "leaky_relu": lambda r: ([p := param(r, 6)], lambda: (leaky_relu(p, 0.01) * Tensor(np.arange(6.0))).sum()),
    "affine": lambda r: (
        [x := param(r, 2, 3, 4), W := param(r, 5, 3), b := param(r, 5)],
        lambda: tanh_op(affine(x, W, b)).sum(),
    ),
    "conv1d_same": lambda r: (
        [x := param(r, 2, 3, 6), K := param(r, 4, 3, 5), b := param(r, 4)],
        lambda: tanh_op(conv1d_same(x, K, b)).sum(),
    ),
    "masked_softmax": lambda r: (
        [q := param(r, 2, 5, 3)],
        lambda: (softmax_over_positions(q, _rand_mask(np.random.default_rng(9), (2, 5))) * Tensor(np.arange(30.0).reshape(2, 5, 3))).sum(),
    ),
    "dropout": lambda r: (
        [p := param(r, 4, 4)],
        lambda: (dropout(p, 0.3, np.random.default_rng(5)) * p).sum(),
    ),
    "l2_normalize": lambda r: (
        [X := param(r, 4, 5)],
        lambda: (l2_normalize_columns(X) * Tensor(np.arange(20.0).reshape(4, 5))).sum(),
    ),
    "batch_norm_train": lambda r: (
        [x := param(r, 3, 6), g := param(r, 3), b := param(r, 3)],
        lambda: (batch_norm_1d(x, g, b, BatchNormState(3), training=True) * Tensor(np.arange(18.0).reshape(3, 6))).sum(),
    ),
    "batch_norm_eval": lambda r: (
        [x := param(r, 3, 6), g := param(r, 3), b := param(r, 3)],
        lambda: tanh_op(batch_norm_1d(x, g, b, BatchNormState(3), training=False)).sum(),
    ),
    "cross_entropy": lambda r: (
        [z := param(r, 3, 5)],
        lambda: softmax_cross_entropy(z, np.array([0, 2, 1, 1, 0])),
    ),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_grad_check(name):
    params, f = PRIMITIVES[name](np.random.default_rng(42))
    assert grad_check(f, params, h=1e-5) < 1e-6


def test_grad_check_quadratic_exact():
    x = Tensor(np.random.default_rng(0).normal(size=10), requires_grad=True)
    assert grad_check(lambda: (x * x).sum(), [x]) < 1e-8


def test_grad_check_non_finite_raises():
    x = Tensor([0.0], requires_grad=True)
    with pytest.raises(EvaluationError), np.errstate(divide="ignore"):
        grad_check(lambda: (Tensor([1.0]) / x).sum(), [x])


def test_cross_entropy_matches_log_softmax():
    z = np.array([[1.0, 0.0], [0.0, 0.0]])
    loss = softmax_cross_entropy(Tensor(z), np.array([0, 1])).item()
    # second column: logits [0, 0], label 1 -> ln 2
    expected = (math.log1p(math.exp(-1.0)) + math.log(2.0)) / 2
    assert math.isclose(loss, expected, abs_tol=1e-15)
