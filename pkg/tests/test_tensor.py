import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowids import tensor as T
from flowids.errors import NonFiniteOutput, NonScalarLoss, NotOnTape, ShapeMismatch

from helpers import PRIMITIVES, away_from_zero, rng


def test_conv1d_valid_example():
    x = T.tensor(np.array([1, 2, 3, 4, 5.0]).reshape(1, 1, 5))
    k = T.tensor(np.array([1, 0, -1.0]).reshape(1, 1, 3))
    out = T.conv1d(x, k, padding="valid")
    np.testing.assert_array_equal(out.data.ravel(), [-2, -2, -2])


def test_conv1d_same_keeps_length():
    x = T.tensor(rng().normal(size=(2, 3, 7)))
    w = T.tensor(rng(1).normal(size=(4, 3, 3)))
    assert T.conv1d(x, w, padding="same").shape == (2, 4, 7)
    w4 = T.tensor(rng(1).normal(size=(4, 3, 4)))
    assert T.conv1d(x, w4, padding="same").shape == (2, 4, 7)


def test_conv1d_matches_direct_loop():
    x = rng().normal(size=(2, 3, 6))
    w = rng(1).normal(size=(4, 3, 3))
    b = rng(2).normal(size=4)
    out = T.conv1d(x, w, b, padding="valid").data
    expected = np.zeros((2, 4, 4))
    for n in range(2):
        for o in range(4):
            for t in range(4):
                expected[n, o, t] = np.sum(x[n, :, t:t + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_maxpool_example():
    out = T.maxpool1d(T.tensor([3, 1, 4, 1, 5, 9.0]), 2, 2)
    np.testing.assert_array_equal(out.data, [3, 4, 9])


def test_dropout_boundaries():
    x = T.tensor(rng().normal(size=(4, 5)))
    assert T.dropout(x, 0.0, train=True, seed=3) is x
    np.testing.assert_array_equal(T.dropout(x, 1.0, train=True, seed=3).data, 0.0)
    for rate in (0.0, 0.5, 1.0):
        np.testing.assert_array_equal(T.dropout(x, rate, train=False).data, x.data)


def test_dropout_seeded_and_unbiased():
    x = T.tensor(np.ones(200_000))
    a = T.dropout(x, 0.3, train=True, seed=11).data
    b = T.dropout(x, 0.3, train=True, seed=11).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, T.dropout(x, 0.3, train=True, seed=12).data)
    # inverted scaling: E[out] = in; std of the mean is ~0.0015 here
    assert abs(a.mean() - 1.0) < 0.01


def test_backward_sum_is_ones():
    x = T.tensor(rng().normal(size=(3, 4)), requires_grad=True)
    with T.Tape() as tape:
        loss = T.reduce_sum(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_square_example():
    x = T.tensor([1.0, -2.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.reduce_sum(T.square(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, -4.0])


def test_gradients_accumulate_over_reuse():
    x = T.tensor([1.5, -0.5], requires_grad=True)
    with T.Tape() as tape:
        loss = T.reduce_sum(T.mul(x, x) + x)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)
    # a second backward pass accumulates into .grad
    with T.Tape() as tape:
        loss = T.reduce_sum(x)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data + 2)


def test_backward_errors():
    x = T.tensor([1.0, 2.0], requires_grad=True)
    with T.Tape() as tape:
        y = T.square(x)
    with pytest.raises(NonScalarLoss):
        tape.backward(y)
    other = T.Tape()
    with T.Tape():
        loss = T.reduce_sum(x)
    with pytest.raises(NotOnTape):
        other.backward(loss)
    with pytest.raises(NotOnTape):
        other.backward(T.tensor(1.0))


def test_no_recording_outside_tape():
    x = T.tensor([1.0], requires_grad=True)
    y = T.square(x)
    assert y.is_leaf and not y.requires_grad


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        T.add(T.tensor(np.ones((2, 3))), T.tensor(np.ones((4,))))
    with pytest.raises(ShapeMismatch):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        T.conv1d(T.tensor(np.ones((1, 2, 5))), T.tensor(np.ones((1, 3, 3))))
    with pytest.raises(ShapeMismatch):
        T.maxpool1d(T.tensor(np.ones(3)), 4)


def test_composite_graph_matches_finite_differences():
    r = rng(5)
    x = T.tensor(r.normal(size=(2, 2, 9)))
    w = T.tensor(r.normal(size=(3, 2, 3)))
    m = T.tensor(r.normal(size=(9, 4)))

    def f(ts):
        xx, ww, mm = ts
        h = T.maxpool1d(T.relu(T.conv1d(xx, ww, padding="valid")), 2, 2)
        return T.reduce_mean(T.matmul(T.reshape(h, (2, 9)), mm))

    assert T.grad_check(f, [x, w, m], eps=1e-5) <= 1e-6


def test_grad_check_sum_and_tanh():
    x = T.tensor(rng(3).normal(size=8))
    assert T.grad_check(T.reduce_sum, x) <= 1e-10
    assert T.grad_check(lambda t: T.reduce_mean(T.tanh(t)), x) <= 1e-6


def test_grad_check_nonfinite():
    with pytest.raises(NonFiniteOutput), np.errstate(invalid="ignore"):
        T.grad_check(lambda t: T.reduce_sum(T.log(t)), T.tensor([-1.0, 2.0]))


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_grad_check(name):
    f, arrays = PRIMITIVES[name]
    xs = [T.tensor(a.copy()) for a in arrays]
    assert T.grad_check(f, xs, eps=1e-5) <= 1e-6


def test_maxpool_routes_to_first_max():
    x = T.tensor(np.array([[2.0, 2.0, 1.0, 5.0, 5.0, 0.0]]), requires_grad=True)
    with T.Tape() as tape:
        out = T.maxpool1d(x, 3, 3)
        loss = T.reduce_sum(T.mul(out, np.array([[1.5, -2.0]])))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [[1.5, 0, 0, -2.0, 0, 0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(4, 12), st.integers(1, 4),
       st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_maxpool_gradient_mass_preserved(b, c, length, width, stride, seed):
    if width > length:
        return
    r = rng(seed)
    x = T.tensor(r.integers(0, 3, size=(b, c, length)).astype(float), requires_grad=True)
    with T.Tape() as tape:
        out = T.maxpool1d(x, width, stride)
    g = r.normal(size=out.shape)
    with T.Tape() as tape:
        out = T.maxpool1d(x, width, stride)
        loss = T.reduce_sum(T.mul(out, g))
    tape.backward(loss)
    assert np.isclose(x.grad.sum(), g.sum())


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_backward_is_linear(a, b, seed):
    r = rng(seed)
    x = T.tensor(r.normal(size=(2, 5)), requires_grad=True)
    w = r.normal(size=(5, 3))

    def f(t):
        return T.reduce_sum(T.tanh(T.matmul(t, w)))

    def g(t):
        return T.reduce_mean(T.square(t))

    with T.Tape() as tape:
        combo = T.add(T.mul(f(x), a), T.mul(g(x), b))
    (g_combo,) = tape.gradients(combo, [x])
    with T.Tape() as tape:
        fx = f(x)
    (g_f,) = tape.gradients(fx, [x])
    with T.Tape() as tape:
        gx = g(x)
    (g_g,) = tape.gradients(gx, [x])
    np.testing.assert_allclose(g_combo, a * g_f + b * g_g, atol=1e-12)


def test_dropout_eval_identity_any_rate():
    x = T.tensor(rng().normal(size=10))
    for rate in np.linspace(0, 1, 5):
        assert T.dropout(x, rate, train=False, seed=1) is x
