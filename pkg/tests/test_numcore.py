import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from paretofact import gradcheck
from paretofact import numcore as nc
from paretofact.errors import ContractError, DimensionError
from paretofact.numcore import Tensor

from oracles import matmul_loops

finite = st.floats(-2, 2, allow_nan=False, width=32)


def T(x, grad=False):
    return Tensor(x, requires_grad=grad)


# ---------------------------------------------------------------- forward values

def test_matmul_identity_and_dot():
    np.testing.assert_array_equal(nc.matmul(T([[1, 0], [0, 1]]), T([[5, 6], [7, 8]])).data, [[5, 6], [7, 8]])
    assert nc.matmul(T([[1, 2]]), T([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(nc.matmul(T(a), T(b)).data, matmul_loops(a.tolist(), b.tolist()), atol=1e-6)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nc.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


def test_elementwise_examples():
    assert nc.elementwise("sigmoid", T(0.0)).item() == 0.5
    assert nc.elementwise("leaky_relu", T(-2.0), alpha=0.2).item() == pytest.approx(-0.4)
    x = T([1.5, -2.0])
    np.testing.assert_array_equal(nc.elementwise("add", x, T([0.0, 0.0])).data, x.data)
    with pytest.raises(DimensionError):
        nc.elementwise("mul", T([1.0, 2.0]), T([1.0, 2.0, 3.0]))
    with pytest.raises(ContractError):
        nc.elementwise("tanh", x)


def test_sigmoid_extremes_stay_finite():
    out = nc.sigmoid(T([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] >= 0 and out[1] <= 1


def test_softmax_examples():
    np.testing.assert_allclose(nc.softmax(T([0.0, 0.0])).data, [0.5, 0.5])
    for c in (-50.0, 0.0, 7.0):
        np.testing.assert_allclose(nc.softmax(T([c] * 4)).data, [0.25] * 4, atol=1e-7)
    big = nc.softmax(T([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(DimensionError):
        nc.softmax(T([1.0]))


@given(arrays(np.float32, st.integers(2, 8), elements=st.floats(-50, 50, width=32)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(logits, c):
    p = nc.softmax(T(logits)).data
    assert abs(float(p.sum(dtype=np.float64)) - 1.0) < 1e-6
    with nc.precision(np.float64):
        p64 = nc.softmax(T(logits.astype(np.float64))).data
        q64 = nc.softmax(T(logits.astype(np.float64) + c)).data
    np.testing.assert_allclose(p64, q64, atol=1e-6)


def test_cross_entropy_examples():
    assert nc.cross_entropy([1.0, 0.0], T([0.5, 0.5])).item() == pytest.approx(math.log(2), abs=1e-6)
    assert nc.cross_entropy([1.0, 0.0], T([1 - 1e-7, 1e-7])).item() == pytest.approx(0.0, abs=1e-6)
    want = -(0.3 * math.log(0.3) + 0.7 * math.log(0.7))
    assert want == pytest.approx(0.6109, abs=1e-4)
    assert nc.cross_entropy([0.3, 0.7], T([0.3, 0.7])).item() == pytest.approx(want, abs=1e-6)
    with pytest.raises(DimensionError):
        nc.cross_entropy([1.0, 0.0, 0.0], T([0.5, 0.5]))


def test_cross_entropy_clamps_zero_probability():
    value = nc.cross_entropy([0.0, 1.0], T([1.0, 0.0])).item()
    assert math.isfinite(value) and value == pytest.approx(-math.log(1e-7), rel=1e-3)


@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(0.01, 1)), st.integers(0, 5))
def test_cross_entropy_onehot_nonnegative(raw, k):
    p = raw / raw.sum()
    target = np.eye(len(p))[k % len(p)]
    assert nc.cross_entropy(target, T(p)).item() >= 0


def test_norms():
    assert nc.norm(T(np.zeros(4)), "l2").item() == 0.0
    assert nc.norm(T([0.3, 0.4]), "l2").item() == pytest.approx(0.5)
    assert nc.norm(T([1.0, -1.0, 2.0]), "l1").item() == 4.0
    with pytest.raises(ContractError):
        nc.norm(T([1.0]), "linf")


# ---------------------------------------------------------------- backward

def test_backward_of_sum_is_ones():
    x = T(np.random.default_rng(0).normal(size=(2, 3)), grad=True)
    nc.backward(nc.total(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_of_sum_of_squares_is_twice_x():
    x = T([1.0, -2.0, 0.5], grad=True)
    nc.backward(nc.sum_squares(x))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_rejects_non_scalar():
    x = T([1.0, 2.0], grad=True)
    with pytest.raises(ContractError):
        nc.backward(nc.scale(x, 2.0))


def test_unreached_parameter_gets_exact_zero():
    x, y = T([1.0, 2.0], grad=True), T([3.0], grad=True)
    gx, gy = nc.grad(nc.total(x), [x, y])
    assert np.array_equal(gy, np.zeros(1))
    assert np.array_equal(gx, np.ones(2))


def test_shared_node_visited_once():
    # y feeds the loss twice; a double visit would double its contribution
    x = T([1.5], grad=True)
    y = nc.scale(x, 3.0)
    loss = nc.total(nc.add(y, y))
    nc.backward(loss)
    assert x.grad.tolist() == [6.0]


def test_no_grad_builds_no_graph():
    x = T([1.0], grad=True)
    with nc.no_grad():
        y = nc.scale(x, 2.0)
    assert y._backward is None


@pytest.mark.parametrize("name", sorted(gradcheck.OP_CASES))
def test_op_gradient_matches_finite_differences(name):
    for seed in range(5):
        result = gradcheck.check_case(name, gradcheck.OP_CASES[name], seed)
        assert result.ok, result


def test_two_layer_network_gradient():
    rng = np.random.default_rng(11)
    with nc.precision(np.float64):
        W1, b1 = T(rng.normal(size=(4, 5)), True), T(rng.normal(size=5), True)
        W2, b2 = T(rng.normal(size=(5, 3)), True), T(rng.normal(size=3), True)
        x = T(rng.uniform(-2, 2, (6, 4)))
        target = np.eye(3)[rng.integers(0, 3, 6)]

        def loss():
            h = nc.leaky_relu(nc.add_bias(nc.matmul(x, W1), b1))
            return nc.cross_entropy(target, nc.softmax(nc.add_bias(nc.matmul(h, W2), b2)))

        with nc.kink_monitor() as mon:
            loss()
        assert mon.min_distance > gradcheck.KINK_MARGIN
        params = [W1, b1, W2, b2]
        for a, n in zip(nc.grad(loss(), params), nc.finite_difference(loss, params, h=gradcheck.H)):
            assert nc.relative_error(a, n) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_composition_gradients(seed):
    rng = np.random.default_rng(seed)
    with nc.precision(np.float64):
        a = T(rng.uniform(-2, 2, (3, 4)), True)
        b = T(rng.uniform(-2, 2, (4, 2)), True)
        c = T(rng.uniform(-2, 2, (3, 2)), True)

        def loss():
            h = nc.mul(nc.sigmoid(nc.matmul(a, b)), c)
            return nc.add(nc.norm(h, "l2"), nc.mean(nc.leaky_relu(nc.sub(h, c))))

        with nc.kink_monitor() as mon:
            loss()
        if mon.min_distance < 1e-2:
            return
        for g, n in zip(nc.grad(loss(), [a, b, c]), nc.finite_difference(loss, [a, b, c], h=1e-5)):
            assert nc.relative_error(g, n) < 1e-3


def test_float32_by_default_float64_under_precision():
    assert T([1.0]).data.dtype == np.float32
    with nc.precision(np.float64):
        assert T([1.0]).data.dtype == np.float64
    assert T([1.0]).data.dtype == np.float32


@given(arrays(np.float32, (3, 4), elements=finite))
def test_ops_are_pure(x):
    first = nc.softmax(nc.leaky_relu(T(x))).data
    second = nc.softmax(nc.leaky_relu(T(x))).data
    assert first.tobytes() == second.tobytes()


@given(arrays(np.float32, (2, 5), elements=finite))
def test_outputs_finite_on_finite_inputs(x):
    t = T(x)
    for out in (nc.sigmoid(t), nc.softmax(t), nc.leaky_relu(t), nc.abs_(t), nc.norm(t), nc.mean(t)):
        assert np.all(np.isfinite(out.data))


def test_finite_difference_detects_a_wrong_rule():
    def bad_square(a):
        av = a.data
        return nc._node(av * av, (a,), lambda g: (g * av,))  # should be 2 * av

    with nc.precision(np.float64):
        x = T([0.7, -1.3], True)
        fn = lambda: nc.total(bad_square(x))  # noqa: E731
        assert gradcheck.compare(fn, [x]) > 0.1
