import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from obic import tensor as T
from obic.tensor import GRADCHECK_OPS, GraphError, NonFiniteError, Tensor, grad_check


def test_identity_graph_passes_gradient_through():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    y = T.reshape(x, (2, 3))
    y.backward(np.ones((2, 3)))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_unit_kernel_conv_is_identity(rng):
    x = rng.normal(size=(2, 1, 5, 7))
    w = np.ones((1, 1, 1, 1))
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_of_ones_has_nine_in_the_centre():
    out = T.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
    assert out.data[0, 0, 2, 2] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_scipy_correlate(rng, stride):
    x = rng.normal(size=(1, 3, 9, 8))
    w = rng.normal(size=(2, 3, 3, 3))
    got = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=1).data
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(2):
        ref = sum(signal.correlate2d(padded[0, c], w[o, c], mode="valid") for c in range(3))
        np.testing.assert_allclose(got[0, o], ref[::stride, ::stride], rtol=1e-12, atol=1e-12)


def test_conv_transpose_is_the_adjoint_of_conv(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(3, 4, 5, 5))
    y = rng.normal(size=(2, 4, 16, 16))
    up = T.conv_transpose2d(Tensor(x), Tensor(w), stride=2, padding=2, output_padding=1).data
    assert up.shape == (2, 4, 16, 16)
    # conv with the same weights reinterpreted (out=3, in=4) goes back down
    down = T.conv2d(Tensor(y), Tensor(w), stride=2, padding=2).data
    np.testing.assert_allclose(np.sum(up * y), np.sum(x * down), rtol=1e-10)


def test_sum_gradient_is_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    T.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_square_gradient_is_twice_x(rng):
    data = rng.normal(size=(3, 4))
    x = Tensor(data, requires_grad=True)
    T.sum(x * x).backward()
    np.testing.assert_allclose(x.grad, 2 * data)


@pytest.mark.parametrize("op", GRADCHECK_OPS)
@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(op, seed):
    shape = (1, 3, 32, 32) if op == "msssim" else (2, 3, 6, 6)
    assert grad_check(op, shape, eps=1e-4, seed=seed) < 1e-4


@pytest.mark.parametrize(
    "op, shape",
    [("mul", (2, 3, 3)), ("conv2d_stride2", (3, 8, 8)), ("logistic_cdf", (1, 4, 4))],
)
def test_documented_gradcheck_cases(op, shape):
    assert grad_check(op, shape, eps=1e-4) < 1e-4


def test_grad_check_rejects_unknown_ops():
    with pytest.raises(ValueError, match="unsupported"):
        grad_check("softmax", (1, 2, 4, 4))


def test_backward_without_a_graph_is_an_error():
    with pytest.raises(GraphError):
        Tensor(np.ones(3)).backward()


def test_non_finite_values_name_the_op():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    with np.errstate(divide="ignore"), pytest.raises(NonFiniteError, match="log"):
        T.log(x)


def test_masked_conv_is_causal(rng):
    mask = T.causal_kernel_mask(5)
    w = Tensor(rng.normal(size=(2, 3, 5, 5)))
    x = rng.normal(size=(1, 3, 6, 6))
    base = T.masked_conv2d(Tensor(x), w, None, mask).data
    i, j = 3, 2
    bumped = x.copy()
    bumped[:, :, i, j:] += 10.0  # the position itself and everything after it in the row
    bumped[:, :, i + 1 :, :] += 10.0
    out = T.masked_conv2d(Tensor(bumped), w, None, mask).data
    np.testing.assert_array_equal(out[..., i, j], base[..., i, j])
    assert mask.sum() == 12


def test_forward_and_backward_are_deterministic(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))

    def run():
        xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        T.sum(T.leaky_relu(T.conv2d(xt, wt, padding=1))).backward()
        return xt.grad, wt.grad

    a, b = run(), run()
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


@given(
    st.integers(1, 3),
    st.integers(1, 4),
    st.floats(-3, 3, allow_nan=False),
    st.floats(-3, 3, allow_nan=False),
)
def test_backward_is_linear_in_the_seed_gradient(n, m, alpha, beta):
    r = np.random.default_rng(n * 10 + m)
    data = r.normal(size=(n, m))
    g1, g2 = r.normal(size=(n, m)), r.normal(size=(n, m))

    def grad(g):
        x = Tensor(data, requires_grad=True)
        T.exp(x * 0.5).backward(g)
        return x.grad

    np.testing.assert_allclose(grad(alpha * g1 + beta * g2), alpha * grad(g1) + beta * grad(g2), atol=1e-9)


@given(st.tuples(st.integers(1, 3), st.integers(1, 3)), st.booleans())
def test_broadcast_gradients_reduce_to_operand_shape(shape, row):
    r = np.random.default_rng(sum(shape))
    a = Tensor(r.normal(size=shape), requires_grad=True)
    b_shape = (1, shape[1]) if row else (shape[0], 1)
    b = Tensor(r.normal(size=b_shape), requires_grad=True)
    T.sum(a * b).backward()
    assert a.grad.shape == shape and b.grad.shape == b_shape
    np.testing.assert_allclose(b.grad, (a.data).sum(axis=0 if row else 1, keepdims=True))


def test_uniform_noise_stays_in_half_open_interval(rng):
    x = Tensor(rng.normal(size=10_000), requires_grad=True)
    y = T.uniform_noise(x, rng)
    d = y.data - x.data
    assert d.min() >= -0.5 and d.max() < 0.5
    T.sum(y).backward()
    np.testing.assert_array_equal(x.grad, np.ones(10_000))
