import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwcredit import diffmath as dm
from pwcredit.gradcheck import OP_CASES, numerical_gradient, relative_error


def test_constant_forward_value():
    t = dm.Tape()
    c = t.constant([[1, 2]])
    np.testing.assert_array_equal(c.value, [[1.0, 2.0]])
    assert c.shape == (1, 2)


def test_constant_has_no_gradient_entry():
    t = dm.Tape()
    c = t.constant([[2.0]])
    x = t.param([[3.0]])
    grads = t.backward(c * x)
    assert c.id not in grads
    assert grads[x.id][0, 0] == 2.0


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_nonfinite_leaf_rejected(bad):
    t = dm.Tape()
    with pytest.raises(dm.DomainError):
        t.constant([[bad]])
    with pytest.raises(dm.DomainError):
        t.param([[bad]])


def test_square_gradient():
    t = dm.Tape()
    x = t.param(3.0)
    assert t.backward(x * x)[x.id][0, 0] == 6.0


def test_param_used_twice_accumulates():
    t = dm.Tape()
    x = t.param([[1.0, -2.0]])
    y = dm.total(x * 3.0 + dm.exp(x))
    np.testing.assert_allclose(t.backward(y)[x.id], 3.0 + np.exp([[1.0, -2.0]]))


def test_unused_param_gets_zero_matrix():
    t = dm.Tape()
    x = t.param(np.ones((2, 3)))
    y = t.param([[2.0]])
    g = t.backward(y * y)
    np.testing.assert_array_equal(g[x.id], np.zeros((2, 3)))


def test_softmax_and_sigmoid_values():
    t = dm.Tape()
    np.testing.assert_allclose(dm.softmax_rows(t.constant([[0.0, 0.0]])).value, [[0.5, 0.5]])
    assert dm.sigmoid(t.constant(0.0)).value[0, 0] == 0.5


def test_log_softmax_gradient_at_origin():
    # frozen from central differences with step 1e-6
    fd = numerical_gradient(lambda x: float(np.log(np.exp(x[0, 0]) / np.exp(x).sum())),
                            np.zeros((1, 2)), step=1e-6)
    np.testing.assert_allclose(fd, [[0.5, -0.5]], atol=1e-9)
    t = dm.Tape()
    x = t.param([[0.0, 0.0]])
    g = t.backward(dm.dot(dm.log_softmax_rows(x), np.array([[1.0, 0.0]])))[x.id]
    np.testing.assert_allclose(g, [[0.5, -0.5]], atol=1e-12)


def test_sigmoid_sum_gradient():
    t = dm.Tape()
    eta = t.param([[0.0]])
    assert t.backward(dm.total(dm.sigmoid(eta)))[eta.id][0, 0] == 0.25


def test_shape_mismatch_and_domain_errors_name_the_op():
    t = dm.Tape()
    a, b = t.param(np.ones((2, 2))), t.param(np.ones((2, 3)))
    with pytest.raises(dm.ShapeError, match="add"):
        a + b
    with pytest.raises(dm.ShapeError, match="matmul"):
        b @ a
    neg = t.constant([[-1.0, 1.0]])
    with pytest.raises(dm.DomainError, match=rf"log: .* node {neg.id}"):
        dm.log(neg)
    with pytest.raises(dm.DomainError, match="div"):
        a / t.constant(np.zeros((2, 2)))


def test_backward_requires_scalar():
    t = dm.Tape()
    x = t.param(np.ones((2, 2)))
    with pytest.raises(dm.ShapeError):
        t.backward(x * 2.0)


def test_inputs_precede_nodes_and_values_are_frozen():
    t = dm.Tape()
    x = t.param(np.arange(4.0).reshape(2, 2) + 1)
    y = dm.total(dm.log(x) * dm.sigmoid(x) + x @ x)
    before = [t._values[i].copy() for i in range(len(t))]
    t.backward(y)
    for node in range(len(t)):
        assert all(i < node for i in t.inputs(node))
        np.testing.assert_array_equal(t._values[node], before[node])
    with pytest.raises(ValueError):
        x.value[0, 0] = 5.0


def _composed(theta0, eta, steps, lr):
    """theta <- theta + lr * g(theta, eta) with g = sigmoid(eta) * tanh-ish pull."""
    t = dm.Tape()
    e = t.param(eta)
    th = t.constant(theta0)
    target = np.linspace(-1, 1, theta0.size).reshape(theta0.shape)
    for _ in range(steps):
        g = dm.sigmoid(e) * (target - th) - 0.1 * th * th
        th = th + lr * g
    loss = dm.total(dm.square(th - 0.3))
    return t, e, loss


@pytest.mark.parametrize("steps", [2, 16])
def test_composed_updates_match_finite_differences(steps):
    rng = np.random.default_rng(steps)
    theta0, eta = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    t, e, loss = _composed(theta0, eta, steps, 0.2)
    g = t.backward(loss)[e.id]
    fd = numerical_gradient(lambda x: _composed(theta0, x, steps, 0.2)[2].value[0, 0], eta)
    assert relative_error(g, fd) < 1e-6


def test_sqrt_gradient_is_zero_at_zero():
    t = dm.Tape()
    x = t.param([[0.0, 4.0]])
    np.testing.assert_array_equal(t.backward(dm.total(dm.sqrt(x)))[x.id], [[0.0, 0.25]])


def test_numpy_left_operand_dispatches_to_tape():
    t = dm.Tape()
    x = t.param([[1.0, 2.0]])
    y = np.array([[2.0, 3.0]]) * x
    assert isinstance(y, dm.DiffValue)
    np.testing.assert_array_equal(t.backward(dm.total(y))[x.id], [[2.0, 3.0]])


def test_determinism():
    def run():
        rng = np.random.default_rng(7)
        return _composed(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), 5, 0.3)

    t1, e1, l1 = run()
    t2, e2, l2 = run()
    assert l1.value.tobytes() == l2.value.tobytes()
    assert t1.backward(l1)[e1.id].tobytes() == t2.backward(l2)[e2.id].tobytes()


@settings(max_examples=40, deadline=None)
@given(name=st.sampled_from(sorted(OP_CASES)), rows=st.integers(1, 4), cols=st.integers(1, 4),
       seed=st.integers(0, 2**31 - 1))
def test_op_gradients_match_finite_differences(name, rows, cols, seed):
    gens, fn = OP_CASES[name]
    rng = np.random.default_rng(seed)
    inputs = [g(rng, (rows, cols)) for g in gens]
    t = dm.Tape()
    params = [t.param(x) for x in inputs]
    out = fn(*params)
    proj = rng.normal(size=out.shape)
    grads = t.backward(dm.dot(out, proj))
    for i, x in enumerate(inputs):
        def f(xi, i=i):
            tt = dm.Tape()
            args = [tt.constant(xi if j == i else inputs[j]) for j in range(len(inputs))]
            return float((fn(*args).value * proj).sum())
        assert relative_error(grads[params[i].id], numerical_gradient(f, x)) < 1e-6
