import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defian import autograd as ag
from defian.autograd import DiffNode, backward, default_dtype, get_dtype

from conftest import grad_check


def test_square_sum_gradient_is_2x(f64):
    x = DiffNode(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(ag.sum_(ag.square(x)))
    np.testing.assert_array_equal(x.grad, 2 * x.value)


def test_disconnected_parameter_keeps_zero_grad(f64):
    a = DiffNode(np.ones(3), requires_grad=True)
    b = DiffNode(np.ones(3), requires_grad=True)
    backward(ag.sum_(ag.mul(a, 3.0)))
    assert np.all(b.grad == 0)
    np.testing.assert_array_equal(a.grad, 3.0)


def test_non_scalar_loss_rejected():
    x = DiffNode(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(ag.mul(x, 2.0))


def test_shared_subexpression_visited_once(f64):
    # y = x*x reused twice: d/dx (y + y) = 4x
    x = DiffNode(np.array([1.5, -2.0]), requires_grad=True)
    y = ag.mul(x, x)
    backward(ag.sum_(ag.add(y, y)))
    np.testing.assert_allclose(x.grad, 4 * x.value)


def test_leaf_grads_accumulate_across_backward_calls(f64):
    x = DiffNode(np.array([2.0]), requires_grad=True)
    backward(ag.sum_(ag.square(x)))
    backward(ag.sum_(ag.square(x)))
    np.testing.assert_allclose(x.grad, [8.0])


def test_sigmoid_relu_values():
    s = ag.sigmoid(np.array([0.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(s.value, [0.5, 1.0, 0.0])
    np.testing.assert_array_equal(ag.relu(np.array([-3.0, 2.0])).value, [0.0, 2.0])


def test_sigmoid_derivative_at_zero(f64):
    x = DiffNode(np.zeros(1), requires_grad=True)
    backward(ag.sum_(ag.sigmoid(x)))
    assert x.grad[0] == pytest.approx(0.25)


def test_sigmoid_fd_1e4_step(f64):
    rng = np.random.default_rng(3)
    x = DiffNode(rng.uniform(-4, 4, 50), requires_grad=True)
    backward(ag.sum_(ag.sigmoid(x)))
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    numeric = (sig(x.value + 1e-4) - sig(x.value - 1e-4)) / 2e-4
    assert np.max(np.abs(numeric - x.grad)) <= 1e-6


def test_sqrt_clamps_and_has_zero_grad_at_zero(f64):
    x = DiffNode(np.array([-1e-12, 0.0, 4.0]), requires_grad=True)
    out = ag.sqrt(x)
    np.testing.assert_array_equal(out.value, [0.0, 0.0, 2.0])
    backward(ag.sum_(out))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 0.25])


def test_abs_subgradient_is_zero_at_tie(f64):
    x = DiffNode(np.array([-2.0, 0.0, 3.0]), requires_grad=True)
    backward(ag.sum_(ag.abs_(x)))
    np.testing.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])


def test_python_scalars_do_not_upcast():
    x = DiffNode(np.ones(3, dtype=np.float32))
    assert (x * 0.5 + 1.0 - 2).dtype == np.float32


def test_dtype_switch_restores():
    before = get_dtype()
    with default_dtype(np.float64):
        assert get_dtype() is np.float64
        assert DiffNode(np.arange(3)).dtype == np.float64
    assert get_dtype() is before
    with pytest.raises(ValueError):
        ag.set_dtype(np.int32)


ELEMENTWISE = [
    ("add", lambda a, b: ag.add(a, b), 2),
    ("sub", lambda a, b: ag.sub(a, b), 2),
    ("mul", lambda a, b: ag.mul(a, b), 2),
    ("div", lambda a, b: ag.div(a, ag.add(ag.square(b), 0.5)), 2),
    ("neg", lambda a: ag.neg(a), 1),
    ("square", lambda a: ag.square(a), 1),
    ("sqrt", lambda a: ag.sqrt(ag.add(ag.square(a), 0.1)), 1),
    ("abs", lambda a: ag.abs_(a), 1),
    ("relu", lambda a: ag.relu(a), 1),
    ("sigmoid", lambda a: ag.sigmoid(a), 1),
    ("sum_axis", lambda a: ag.sum_(a, axis=1), 1),
    ("mean_keepdims", lambda a: ag.mean(a, axis=(0, 2), keepdims=True), 1),
    ("reshape", lambda a: ag.reshape(a, (6, 4)), 1),
    ("broadcast", lambda a: ag.broadcast_to(ag.mean(a, axis=1, keepdims=True), (2, 3, 4)), 1),
    ("concat", lambda a, b: ag.concat([a, b], axis=1), 2),
]


@pytest.mark.parametrize("name,fn,arity", ELEMENTWISE, ids=[e[0] for e in ELEMENTWISE])
def test_elementwise_fd(f64, name, fn, arity):
    rng = np.random.default_rng(7)
    # keep |x| away from the kinks of abs/relu so the central difference is valid
    arrays = []
    for _ in range(arity):
        a = rng.uniform(0.2, 1.5, (2, 3, 4)) * rng.choice([-1, 1], (2, 3, 4))
        arrays.append(a)
    grad_check(fn, arrays, rtol=1e-6, atol=1e-9)


def test_broadcast_add_gradient_sums(f64):
    a = DiffNode(np.ones((2, 3)), requires_grad=True)
    b = DiffNode(np.ones(3), requires_grad=True)
    backward(ag.sum_(ag.add(a, b)))
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(
    shape=st.lists(st.integers(1, 4), min_size=1, max_size=4),
    data=st.data(),
)
def test_unbroadcast_inverts_broadcast(shape, data):
    # any axis of size 1 broadcast up must be summed back
    target = tuple(data.draw(st.sampled_from([1, n])) for n in shape)
    g = np.ones(shape)
    out = ag.unbroadcast(g, target)
    assert out.shape == target
    assert out.sum() == pytest.approx(g.sum())
