import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mre import numcore as nc
from mre.exceptions import ContractError, DomainError, NumericalError, ShapeError
from mre.numcore import Tensor

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def leaf(x):
    return nc.parameter(np.asarray(x, dtype=np.float64))


# -- forward primitives -----------------------------------------------------

def test_softmax_symmetric_row():
    np.testing.assert_allclose(nc.softmax(Tensor([2.0, 2.0])).data, [0.5, 0.5], atol=1e-15)


def test_softmax_closed_form():
    np.testing.assert_allclose(nc.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


@given(arrays(np.float64, (3, 4), elements=finite), finite)
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(nc.softmax(Tensor(x + c)).data, nc.softmax(Tensor(x)).data, atol=1e-12)


@given(arrays(np.float64, (5, 6), elements=st.floats(-300, 300)))
def test_softmax_rows_are_distributions(x):
    p = nc.softmax(Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


@pytest.mark.parametrize("a, b", [((3, 4), (4, 3)), ((2, 3), (2,)), ((2, 1), (2, 3))])
def test_elementwise_rejects_non_batch_broadcast(a, b):
    with pytest.raises(ShapeError, match="do not conform"):
        nc.add(Tensor(np.ones(a)), Tensor(np.ones(b)))


def test_elementwise_broadcasts_over_leading_batch():
    out = nc.add(Tensor(np.zeros((4, 2, 3))), Tensor(np.arange(6.0).reshape(2, 3)))
    np.testing.assert_array_equal(out.data[3], np.arange(6.0).reshape(2, 3))


def test_log_of_non_positive_is_domain_error():
    with pytest.raises(DomainError):
        nc.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        nc.log(Tensor([-2.0]))


def test_row_ops_values():
    x = np.array([[-1.0, 0.5], [2.0, -3.0]])
    t = Tensor(x)
    np.testing.assert_array_equal(nc.relu(t).data, np.maximum(x, 0))
    np.testing.assert_allclose(nc.sigmoid(t).data, 1 / (1 + np.exp(-x)), rtol=1e-15)
    np.testing.assert_allclose(nc.tanh(t).data, np.tanh(x))
    np.testing.assert_allclose(nc.exp(t).data, np.exp(x))
    np.testing.assert_allclose(nc.mean(t, axis=0).data, x.mean(axis=0))
    np.testing.assert_array_equal(nc.transpose(t).data, x.T)
    np.testing.assert_array_equal(nc.concat([t, t], axis=1).data, np.hstack([x, x]))
    np.testing.assert_array_equal(t[:, 1].data, x[:, 1])
    np.testing.assert_allclose(nc.scale(t, 2.5).data, 2.5 * x)


def test_sigmoid_is_finite_for_extreme_inputs():
    out = nc.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [0.0, 1.0])


# -- backward -----------------------------------------------------------------

def test_square_gradient():
    x = leaf(3.0)
    nc.backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_constant_loss_gives_zero_gradient():
    x = leaf([1.0, 2.0])
    loss = nc.sum_(x * 0.0) + 5.0
    nc.backward(loss)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_softmax_cross_entropy_gradient_closed_form():
    z = np.array([0.3, -1.2, 2.0, 0.7])
    label = 2
    # hand oracle: d/dz [-log softmax(z)_y] = softmax(z) - onehot(y)
    p = np.exp(z) / np.exp(z).sum()
    expected = p - np.eye(4)[label]

    x = leaf(z)
    loss = -nc.sum_(nc.log_softmax(x) * Tensor(np.eye(4)[label]))
    nc.backward(loss)
    np.testing.assert_allclose(x.grad, expected, atol=1e-14)

    y = leaf(z)
    nc.backward(-nc.log(nc.softmax(y)[label]))
    np.testing.assert_allclose(y.grad, expected, atol=1e-14)


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        nc.backward(x * 2.0)


def test_fan_out_gradients_add():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 3))
    a_val = rng.normal(size=3)

    def path1(a):
        return nc.sum_(nc.tanh(nc.matmul(nc.expand_dims(a, 0), Tensor(w))))

    def path2(a):
        return nc.sum_(nc.sigmoid(a) * a)

    a1, a2, a12 = leaf(a_val), leaf(a_val), leaf(a_val)
    nc.backward(path1(a1))
    nc.backward(path2(a2))
    nc.backward(path1(a12) + path2(a12))
    np.testing.assert_allclose(a12.grad, a1.grad + a2.grad, atol=1e-14)


def test_tape_is_topologically_ordered():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    c = a * b
    loss = nc.sum_(c + a)
    tape = nc.backward(loss)
    pos = {id(n): i for i, n in enumerate(tape)}
    for node in tape:
        for p in node._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]
    assert a.grad is not None and b.grad is not None and c.grad is not None


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with nc.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_dropout_identity_cases():
    x = Tensor(np.arange(6.0))
    rng = np.random.default_rng(0)
    assert nc.dropout(x, 1.0, rng, training=True) is x
    assert nc.dropout(x, 0.5, rng, training=False) is x


def test_dropout_scales_kept_units():
    x = Tensor(np.ones(10000))
    out = nc.dropout(x, 0.8, np.random.default_rng(1), training=True).data
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 1.25)
    assert abs(kept.size / 10000 - 0.8) < 0.02


def test_expand_gradient_sums_stretched_axes():
    x = leaf(np.array([[1.0], [2.0]]))
    nc.backward(nc.sum_(nc.expand(x, (4, 2, 3)) * 1.0))
    np.testing.assert_array_equal(x.grad, [[12.0], [12.0]])


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 3, 4), elements=st.floats(-3, 3)))
def test_values_and_gradients_stay_finite(x):
    t = leaf(x)
    w = Tensor(np.linspace(-1, 1, 20).reshape(4, 5))
    out = nc.log_softmax(nc.tanh(nc.matmul(t, w)))
    loss = nc.mean(nc.sum_(out * out, axis=-1))
    nc.backward(loss)
    assert np.isfinite(out.data).all() and np.isfinite(t.grad).all()


# -- gradient checking --------------------------------------------------------

def test_grad_check_sum_of_squares():
    x = leaf(np.random.default_rng(3).normal(size=7))
    assert nc.grad_check(lambda: nc.sum_(x * x), x) < 1e-7


def test_grad_check_linear_is_exact():
    c = np.random.default_rng(4).normal(size=5)
    x = leaf(np.random.default_rng(5).normal(size=5))
    assert nc.grad_check(lambda: nc.sum_(x * Tensor(c)), x) < 1e-9


def test_grad_check_catches_wrong_gradient():
    x = leaf([0.5, 1.5])

    def wrong(t):
        # forward is x^3, backward claims 2x
        return nc._node(t.data ** 3, (t,), lambda g: (2 * t.data * g,), "cube")

    assert nc.grad_check(lambda: nc.sum_(wrong(x)), x) > 1e-2


def test_grad_check_reports_non_finite_coordinate():
    x = leaf([1.0, 0.0])

    def f():
        # blows up once coordinate 1 goes negative
        return nc.sum_(x * x) + (np.inf if x.data[1] < 0 else 0.0)

    with pytest.raises(NumericalError, match="coordinate 1"):
        nc.grad_check(f, x)


@pytest.mark.parametrize("op", [nc.relu, nc.sigmoid, nc.tanh, nc.exp, nc.softmax, nc.log_softmax])
def test_grad_check_unary_ops(op):
    rng = np.random.default_rng(7)
    x = leaf(rng.normal(size=(3, 4)) + 0.05)
    w = Tensor(rng.normal(size=(3, 4)))
    assert nc.grad_check(lambda: nc.sum_(op(x) * w), x) < 1e-7


def test_grad_check_matmul_variants():
    rng = np.random.default_rng(8)
    a = leaf(rng.normal(size=(2, 3, 4)))
    b = leaf(rng.normal(size=(4, 5)))
    c = leaf(rng.normal(size=(2, 5, 3)))
    f = lambda: nc.sum_(nc.tanh(nc.matmul(nc.matmul(a, b), c)))
    assert nc.grad_check(f, [a, b, c]) < 1e-7


def test_grad_check_structural_ops():
    rng = np.random.default_rng(9)
    a = leaf(rng.normal(size=(2, 3)))
    b = leaf(rng.uniform(0.5, 2.0, size=(2, 3)))
    w = Tensor(rng.normal(size=(3, 4)))

    def f():
        cat = nc.concat([a, b], axis=0)  # (4, 3)
        r = nc.reshape(nc.transpose(cat, (1, 0)), (2, 6))
        part = r[:, 1:4] / b[:, ::-1]
        return nc.sum_(nc.sqrt(b) * nc.log(b)) + nc.sum_(nc.matmul(part, w[:, :3]) * part) \
            + nc.mean(nc.expand(nc.expand_dims(a[0], 0), (5, 3))) - nc.sum_(nc.clip(a, -0.3, 0.3))

    assert nc.grad_check(f, [a, b]) < 1e-7


# -- Adam ---------------------------------------------------------------------

def test_adam_first_step_moves_by_learning_rate():
    theta = leaf([0.0])
    state = nc.AdamState(lr=0.1)
    nc.adam_step([theta], [np.array([1.0])], state)
    assert abs(theta.data[0] - (-0.1)) < 1e-6
    assert state.step == 1


def test_adam_zero_gradient_leaves_params():
    theta = leaf([1.0, -2.0])
    state = nc.AdamState(lr=0.1)
    for _ in range(3):
        nc.adam_step([theta], [np.zeros(2)], state)
    np.testing.assert_array_equal(theta.data, [1.0, -2.0])


def test_adam_symmetric_parameters_update_identically():
    p, q = leaf([0.3, 0.7]), leaf([0.3, 0.7])
    state = nc.AdamState(lr=0.01)
    g = np.array([0.5, -1.5])
    for _ in range(4):
        nc.adam_step([p, q], [g, g], state)
    np.testing.assert_array_equal(p.data, q.data)


def test_adam_shape_mismatch():
    with pytest.raises(ContractError):
        nc.adam_step([leaf([0.0, 0.0])], [np.zeros(3)], nc.AdamState())
    with pytest.raises(ContractError):
        nc.adam_step([leaf([0.0])], [], nc.AdamState())


def test_adam_minimises_quadratic():
    x = leaf([3.0, -2.0])
    opt = nc.Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        nc.backward(nc.sum_(x * x))
        opt.step()
    assert np.abs(x.data).max() < 1e-2
