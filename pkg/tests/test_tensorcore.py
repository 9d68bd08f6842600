import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slafnet import tensorcore as tc
from slafnet.tensorcore import ShapeError


def test_matmul_identity_and_dot():
    a = tc.tensor([[1, 2], [3, 4]])
    assert np.array_equal(tc.matmul(a, tc.tensor(np.eye(2))).data, [[1, 2], [3, 4]])
    assert tc.matmul(tc.tensor([[1, 2]]), tc.tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tc.matmul(tc.tensor(np.ones((2, 3))), tc.tensor(np.ones((2, 3))))


def test_matmul_gradients_finite_difference():
    rng = np.random.default_rng(0)
    a = tc.parameter(rng.normal(size=(5, 7)))
    b = tc.parameter(rng.normal(size=(7, 3)))
    assert tc.grad_check(lambda: tc.total(tc.matmul(a, b)), [a, b]) <= 1e-4


def test_elementwise_examples():
    assert tc.pow_int(tc.tensor([-2.0, 0.0, 3.0]), 2).data.tolist() == [[4.0, 0.0, 9.0]]
    assert tc.relu(tc.tensor([-1.0, 0.0, 2.0])).data.tolist() == [[0.0, 0.0, 2.0]]
    assert tc.sigmoid(tc.tensor(0.0)).item() == 0.5
    assert tc.tanh(tc.tensor(0.0)).item() == 0.0


def test_pow_int_odd_negative_and_zero_exponent():
    x = tc.tensor([-2.0, 0.0, 1.5])
    assert tc.pow_int(x, 3).data.tolist() == [[-8.0, 0.0, 3.375]]
    assert tc.pow_int(x, 0).data.tolist() == [[1.0, 1.0, 1.0]]
    with pytest.raises(ValueError):
        tc.pow_int(x, -1)


def test_binary_shape_rules():
    a = tc.tensor(np.ones((3, 2)))
    row = tc.tensor([[1.0, 2.0]])
    assert tc.add(a, row).data.tolist() == [[2.0, 3.0]] * 3
    with pytest.raises(ShapeError):
        tc.add(a, tc.tensor(np.ones((3, 1))))
    with pytest.raises(ShapeError):
        tc.mul(a, tc.tensor(np.ones((2, 2))))


def test_batch_stats_examples():
    mean, var = tc.batch_stats(tc.tensor([[1.0], [2.0], [3.0]]))
    assert mean.item() == 2.0
    assert abs(var.item() - 2.0 / 3.0) <= 1e-15
    mean, var = tc.batch_stats(tc.tensor([[5.0], [5.0], [5.0]]))
    assert (mean.item(), var.item()) == (5.0, 0.0)
    _, var = tc.batch_stats(tc.tensor([[1.0, -3.0, 7.0]]))
    assert np.all(var.data == 0.0)


def test_backward_examples():
    x = tc.parameter(np.arange(6.0).reshape(2, 3))
    tc.backward(tc.total(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))
    x = tc.parameter([1.0, 2.0])
    tc.backward(tc.total(tc.mul(x, x)))
    assert x.grad.tolist() == [[2.0, 4.0]]


def test_backward_rejects_non_scalar():
    x = tc.parameter(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        tc.backward(tc.mul(x, x))


def test_gradient_accumulates_over_two_consumers():
    x = tc.parameter([[1.5, -2.0]])
    # f = sum(x*x) + sum(3x): df/dx = 2x + 3
    f = tc.add(tc.total(tc.mul(x, x)), tc.total(tc.mul(x, 3.0)))
    tc.backward(f)
    assert np.allclose(x.grad, 2 * x.data + 3, rtol=0, atol=1e-15)


def test_mlp_gradients_finite_difference():
    rng = np.random.default_rng(1)
    X = tc.tensor(rng.normal(size=(8, 4)))
    Y = tc.tensor(rng.normal(size=(8, 2)))
    Ws = [tc.parameter(rng.normal(size=s) * 0.5) for s in [(4, 5), (5, 5), (5, 2)]]
    bs = [tc.parameter(rng.normal(size=(1, s))) for s in (5, 5, 2)]

    def loss():
        h = X
        for i, (W, b) in enumerate(zip(Ws, bs)):
            h = tc.add(tc.matmul(h, W), b)
            if i < 2:
                h = tc.tanh(h)
        return tc.mse(h, Y)

    assert tc.grad_check(loss, Ws + bs) <= 1e-4


def test_grad_check_linear_is_exact():
    rng = np.random.default_rng(2)
    w = tc.parameter(rng.normal(size=(3, 1)))
    X = tc.tensor(rng.normal(size=(6, 3)))
    assert tc.grad_check(lambda: tc.total(tc.matmul(X, w)), [w]) <= 1e-10


def test_bce_and_softmax_ce_values():
    z = tc.tensor([[0.0], [0.0]])
    y = tc.tensor([[1.0], [0.0]])
    assert abs(tc.bce_with_logits(z, y).item() - np.log(2.0)) <= 1e-15
    z = tc.tensor(np.zeros((1, 4)))
    y = tc.tensor([[0.0, 0.0, 1.0, 0.0]])
    assert abs(tc.softmax_cross_entropy(z, y).item() - np.log(4.0)) <= 1e-15


def test_non_finite_predicate():
    assert tc.tensor([1.0, 2.0]).is_finite()
    assert not tc.tensor([1.0, np.nan]).is_finite()
    assert not tc.tensor([np.inf]).is_finite()


def test_no_grad_builds_no_graph():
    x = tc.parameter([[1.0, 2.0]])
    with tc.no_grad():
        y = tc.mul(x, x)
    assert not y.requires_grad


_UNARY = {
    "relu": tc.relu,
    "tanh": tc.tanh,
    "sigmoid": tc.sigmoid,
    "exp": tc.exp,
    "neg": tc.neg,
    "pow3": lambda a: tc.pow_int(a, 3),
    "abs": tc.absolute,
}
_BINARY = {"add": tc.add, "sub": tc.sub, "mul": tc.mul}


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), op=st.sampled_from(sorted(_UNARY) + sorted(_BINARY)))
def test_every_op_matches_finite_differences(seed, op):
    rng = np.random.default_rng(seed)
    a = tc.parameter(rng.uniform(-2, 2, size=(3, 4)))
    # keep away from the kinks of relu and abs, where the derivative jumps
    a.data[np.abs(a.data) < 1e-2] = 0.5
    if op in _UNARY:
        fn = _UNARY[op]
        params = [a]
        f = lambda: tc.total(tc.mul(fn(a), tc.tensor(np.arange(1.0, 13.0).reshape(3, 4))))
    else:
        b = tc.parameter(rng.uniform(-2, 2, size=(1, 4)))
        fn = _BINARY[op]
        params = [a, b]
        f = lambda: tc.total(tc.mul(fn(a, b), fn(a, b)))
    assert tc.grad_check(f, params) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50))
def test_batch_stats_properties(seed, shift):
    rng = np.random.default_rng(seed)
    a = tc.tensor(rng.uniform(-2, 2, size=(17, 3)))
    mean, var = tc.batch_stats(a)
    assert np.all(np.abs((a.data - mean.data).mean(axis=0)) <= 1e-12)
    _, var2 = tc.batch_stats(tc.tensor(a.data + shift))
    assert np.all(np.abs(var.data - var2.data) <= 1e-12)


def test_identity_matmul_exact():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 6))
    assert np.array_equal(tc.matmul(tc.tensor(A), tc.tensor(np.eye(6))).data, A)


_POSITIVE = {
    "log": tc.log,
    "sqrt": tc.sqrt,
    "div": lambda a: tc.div(tc.tensor(np.full(a.shape, 2.0)), a),
    "softmax": tc.softmax,
    "col_mean": tc.col_mean,
}


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), op=st.sampled_from(sorted(_POSITIVE)))
def test_positive_domain_ops_match_finite_differences(seed, op):
    rng = np.random.default_rng(seed)
    a = tc.parameter(rng.uniform(0.5, 2.0, size=(3, 4)))
    fn = _POSITIVE[op]
    f = lambda: tc.total(tc.mul(fn(a), fn(a)))
    assert tc.grad_check(f, [a]) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_matmul_and_row_broadcast_gradients(seed):
    rng = np.random.default_rng(seed)
    a = tc.parameter(rng.uniform(-2, 2, size=(4, 3)))
    w = tc.parameter(rng.uniform(-2, 2, size=(3, 2)))
    b = tc.parameter(rng.uniform(-2, 2, size=(1, 2)))
    f = lambda: tc.total(tc.tanh(tc.add(tc.matmul(a, w), b)))
    assert tc.grad_check(f, [a, w, b]) <= 1e-4
