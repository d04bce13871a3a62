import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wyr.autodiff.functional import (
    elementwise_max_reduce,
    mean_pool_valid,
    repeat_column,
    softmax,
    sort_descending,
)
from wyr.autodiff.layers import (
    BatchNorm,
    BidirectionalLSTM,
    Linear,
    SelfAttention,
    parameter_digest,
)
from wyr.autodiff.optim import Adam
from wyr.autodiff.tensor import Tensor, concat, no_grad, stack
from wyr.errors import FrozenParameterError

seeds = st.integers(min_value=0, max_value=2**16)


def numeric_gradient(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += eps
        down[i] -= eps
        grad[i] = (f(up) - f(down)) / (2 * eps)
    return grad


def check_gradient(f, x):
    leaf = Tensor(x, requires_grad=True)
    f(leaf).backward()
    expected = numeric_gradient(lambda a: f(Tensor(a)).item(), x)
    np.testing.assert_allclose(leaf.grad, expected, rtol=1e-4, atol=1e-7)


UNARY = {
    "exp": lambda t: t.exp(),
    "sigmoid": lambda t: t.sigmoid(),
    "tanh": lambda t: t.tanh(),
    "relu": lambda t: t.relu(),
    "abs": lambda t: t.abs(),
    "square": lambda t: t**2,
    "neg": lambda t: -t,
}


@pytest.mark.parametrize("op", sorted(UNARY))
@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_unary_gradients_match_finite_differences(op, seed):
    x = np.random.default_rng(seed).uniform(-2, 2, size=(3, 4))
    weights = np.random.default_rng(seed + 1).uniform(-2, 2, size=(3, 4))
    check_gradient(lambda t: (UNARY[op](t) * weights).sum(), x)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_log_sqrt_and_division_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 2.0, size=(2, 3))
    other = rng.uniform(0.5, 2.0, size=(2, 3))
    check_gradient(lambda t: (t.log() + t.sqrt() + other / t + t / other).sum(), x)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_matmul_broadcast_and_reductions(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(2, 3, 4))
    w = Tensor(rng.uniform(-2, 2, size=(4, 5)))
    bias = Tensor(rng.uniform(-2, 2, size=(5,)))
    check_gradient(lambda t: ((t @ w + bias).mean(axis=1) ** 2).sum(), x)
    check_gradient(lambda t: t.max(axis=-1).sum() * t.sum(), x[0])
    check_gradient(lambda t: (t.sum(axis=(0, 1)) ** 2).sum(), x)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_movement_operations(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(2, 3, 4))
    weights = rng.uniform(-2, 2, size=(3, 2, 4))
    index = rng.integers(0, 4, size=(2, 3, 1))

    check_gradient(lambda t: (t.swapaxes(0, 1) * weights).sum(), x)
    check_gradient(lambda t: (t.reshape(6, 4)[1:4, ::2] ** 2).sum(), x)
    check_gradient(lambda t: (t.take_along_axis(index, axis=2) ** 3).sum(), x)
    check_gradient(lambda t: (concat([t, t * 2.0], axis=1) ** 2).sum(), x)
    check_gradient(lambda t: (stack([t, t.exp()], axis=0) * 0.5).sum(), x)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_softmax_sort_and_pooling_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(2, 5))
    weights = rng.uniform(-2, 2, size=(2, 5))
    check_gradient(lambda t: (softmax(t) * weights).sum(), x)
    check_gradient(lambda t: (sort_descending(t)[0] * np.arange(5.0)).sum(), x)
    check_gradient(lambda t: elementwise_max_reduce([t, t * -1.0, t**2]).sum(), x)
    check_gradient(lambda t: (mean_pool_valid(t.reshape(2, 5, 1), [3, 5]) ** 2).sum(), x)
    repeated = weights[..., None] * np.array([1.0, -0.5, 2.0])
    check_gradient(lambda t: (repeat_column(t.reshape(2, 5, 1), 3) * repeated).sum(), x)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_sort_descending_permutation_reconstructs_input(values):
    sorted_values, perm = sort_descending(Tensor(values))
    assert sorted(perm.tolist()) == list(range(len(values)))
    np.testing.assert_array_equal(sorted_values.data, np.asarray(values)[perm])
    assert np.all(np.diff(sorted_values.data) <= 0)


def test_max_ties_send_gradient_to_lowest_index():
    x = Tensor([[1.0, 3.0, 3.0]], requires_grad=True)
    x.max(axis=-1).sum().backward()
    assert x.grad.tolist() == [[0.0, 1.0, 0.0]]


def test_log_clamps_zero():
    assert np.isfinite(Tensor([0.0]).log().data).all()


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert y.creator is None
    y.backward()
    assert x.grad is None


def test_backward_needs_a_scalar():
    with pytest.raises(ValueError):
        (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()


def test_item_needs_a_single_value():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]).item()


def test_lstm_states_ignore_padding():
    rng = np.random.default_rng(0)
    lstm = BidirectionalLSTM(3, 4, num_layers=2, rng=rng)
    x = rng.normal(size=(1, 5, 3))
    padded = np.concatenate([x, rng.normal(size=(1, 2, 3))], axis=1)
    short = lstm(Tensor(x), np.array([5]))
    long = lstm(Tensor(padded), np.array([5]))
    for key in ("hidden_forward", "cell_forward", "hidden_backward", "cell_backward"):
        np.testing.assert_allclose(short[key].data, long[key].data[:, :5], atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_lstm_gradient(seed):
    rng = np.random.default_rng(seed)
    lstm = BidirectionalLSTM(2, 3, num_layers=1, rng=rng)
    x = rng.uniform(-2, 2, size=(2, 4, 2))
    check_gradient(lambda t: (lstm(t, np.array([4, 2]))["hidden_backward"] ** 2).sum(), x)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_batch_norm_and_attention_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(2, 4, 3))
    weights = rng.uniform(-2, 2, size=(2, 4, 3))
    valid_len = np.array([4, 2])
    norm = BatchNorm(3)
    attention = SelfAttention(3, rng=rng)
    check_gradient(lambda t: (norm(t, valid_len) * weights).sum(), x)
    check_gradient(lambda t: (attention(t, valid_len) * weights).sum(), x)


def test_batch_norm_uses_valid_positions_only():
    norm = BatchNorm(2)
    x = np.array([[[1.0, 2.0], [3.0, 4.0], [100.0, 100.0]]])
    out = norm(Tensor(x), np.array([2]))
    np.testing.assert_allclose(out.data[0, :2].mean(axis=0), [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(norm._buffers["running_mean"], [0.2, 0.3])


def test_attention_ignores_padded_keys():
    rng = np.random.default_rng(1)
    attention = SelfAttention(4, rng=rng)
    x = rng.normal(size=(1, 3, 4))
    padded = np.concatenate([x, rng.normal(size=(1, 2, 4))], axis=1)
    short = attention(Tensor(x), np.array([3]))
    long = attention(Tensor(padded), np.array([3]))
    np.testing.assert_allclose(short.data, long.data[:, :3], atol=1e-9)


def test_adam_refuses_frozen_parameters():
    layer = Linear(2, 2, rng=np.random.default_rng(0)).freeze()
    with pytest.raises(FrozenParameterError):
        Adam(list(layer.named_parameters()))


def test_adam_step_refuses_parameters_frozen_later():
    layer = Linear(2, 2, rng=np.random.default_rng(0))
    optimiser = Adam(list(layer.named_parameters()))
    layer.freeze()
    with pytest.raises(FrozenParameterError):
        optimiser.step()


def test_parameter_digest_tracks_values():
    layer = Linear(2, 2, rng=np.random.default_rng(0))
    before = parameter_digest(layer)
    assert parameter_digest(layer) == before
    layer.weight.data[0, 0] += 1.0
    assert parameter_digest(layer) != before


def test_state_dict_round_trip_restores_buffers():
    norm = BatchNorm(3)
    norm(Tensor(np.random.default_rng(0).normal(size=(2, 4, 3))), np.array([4, 3]))
    state = norm.state_dict()
    fresh = BatchNorm(3)
    fresh.load_state_dict(state)
    np.testing.assert_array_equal(fresh._buffers["running_var"], state["running_var"])
    with pytest.raises(KeyError):
        fresh.load_state_dict({"gamma": state["gamma"]})


def test_repeat_column_copies_values_and_sums_gradients():
    x = np.array([[[0.2], [0.7], [1.0]]])
    out = repeat_column(Tensor(x), 4)
    assert out.shape == (1, 3, 4)
    np.testing.assert_array_equal(out.data, np.repeat(x, 4, axis=-1))
    weights = np.arange(12.0).reshape(1, 3, 4)
    check_gradient(lambda t: (repeat_column(t, 4) * weights).sum(), x)
    with pytest.raises(ValueError):
        repeat_column(Tensor(x), 0)
    with pytest.raises(ValueError):
        repeat_column(Tensor(np.ones((1, 3, 2))), 4)
