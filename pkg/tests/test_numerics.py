import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ectnet.errors import GraphError, NonFiniteError, ShapeError
from ectnet.numerics import (
    BatchNormState,
    ConvParams,
    Rng,
    Tensor,
    backward,
    batchnorm1d,
    concat_channels,
    conv1d,
    fully_connected,
    global_avg_pool,
    maxpool1d,
    no_grad,
    output_length,
    relu,
    slice_channels,
    softmax,
    softmax_cross_entropy,
    threads,
)
from gradcheck import gradcheck


def T(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- autodiff core -----------------------------------------------------------------

def test_shared_input_gradients_add():
    x = T([1.0, 2.0, 3.0])
    y = (x * 2.0 + x * x).sum()
    backward(y)
    np.testing.assert_allclose(x.grad, 2.0 + 2 * x.data)


def test_backward_without_graph_is_an_error():
    with pytest.raises(GraphError):
        backward(Tensor(np.ones(())))
    x = T([1.0, 2.0])
    with pytest.raises(GraphError):
        backward(x * 2.0)  # not scalar


def test_no_grad_records_nothing():
    x = T([1.0, 2.0])
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    with pytest.raises(GraphError):
        backward(y)


def test_backward_returns_zeros_for_unreachable_parameters():
    x, unused = T([1.0]), T([5.0, 6.0])
    grads = backward((x * 4.0).sum(), parameters=[x, unused])
    np.testing.assert_array_equal(grads[id(x)], [4.0])
    np.testing.assert_array_equal(grads[id(unused)], [0.0, 0.0])


def test_non_finite_forward_raises():
    x = T([1e308, 1e308])
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        x * 10.0


def test_add_requires_matching_shapes():
    with pytest.raises(ShapeError):
        T([1.0, 2.0]) + T([1.0])


# -- kernels: worked examples ------------------------------------------------------

def test_conv1d_hand_example():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1))
    w = Tensor(np.array([1.0, 0.0, -1.0]).reshape(1, 1, 3))
    y = conv1d(x, ConvParams(1, 1, 3, 1, 1, 1, w))
    np.testing.assert_array_equal(y.data.reshape(-1), [-2.0, -2.0, -2.0, 3.0])


def test_conv1d_shape_errors():
    with pytest.raises(ShapeError):
        ConvParams(6, 4, 3, groups=4)
    p = ConvParams(2, 2, 3, padding=1)
    with pytest.raises(ShapeError):
        conv1d(Tensor(np.zeros((1, 5, 3))), p)


def test_maxpool_hand_example_and_padding():
    x = Tensor(np.array([1.0, 3.0, 2.0, 5.0]).reshape(1, 4, 1))
    np.testing.assert_array_equal(maxpool1d(x, 3, 2, 1).data.reshape(-1), [3.0, 5.0])
    # padding is -inf, so all-negative inputs never report the pad
    neg = Tensor(-np.ones((1, 4, 1)))
    assert (maxpool1d(neg, 3, 2, 1).data == -1).all()


def test_maxpool_tie_routes_gradient_to_lowest_index():
    x = T(np.array([2.0, 2.0, 1.0]).reshape(1, 3, 1))
    backward(maxpool1d(x, 3, 1, 0).sum())
    np.testing.assert_array_equal(x.grad.reshape(-1), [1.0, 0.0, 0.0])


@pytest.mark.parametrize("length,k,s,p,expected", [(224, 3, 1, 1, 224), (224, 3, 2, 1, 112), (112, 1, 2, 0, 56),
                                                   (250, 3, 2, 1, 125), (2, 3, 1, 0, 0)])
def test_output_length(length, k, s, p, expected):
    assert output_length(length, k, s, p) == expected


def test_batchnorm_training_and_running_stats():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(3.0, 2.0, size=(8, 5, 3)))
    s = BatchNormState(3)
    y = batchnorm1d(x, s).data
    np.testing.assert_allclose(y.mean(axis=(0, 1)), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 1)), x.data.var(axis=(0, 1)) / (x.data.var(axis=(0, 1)) + 1e-5))
    np.testing.assert_allclose(s.running_mean, 0.1 * x.data.mean(axis=(0, 1)))
    np.testing.assert_allclose(s.running_var, 0.9 + 0.1 * x.data.var(axis=(0, 1)))


def test_batchnorm_inference_uses_running_stats():
    s = BatchNormState(2, training=False)
    s.running_mean = np.array([1.0, -1.0])
    s.running_var = np.array([4.0, 1.0])
    y = batchnorm1d(Tensor(np.array([[[3.0, 0.0]]])), s).data
    np.testing.assert_allclose(y.reshape(-1), [2.0 / np.sqrt(4 + 1e-5), 1.0 / np.sqrt(1 + 1e-5)])


def test_batchnorm_rejects_single_value_in_training():
    with pytest.raises(ShapeError):
        batchnorm1d(Tensor(np.ones((1, 1, 2))), BatchNormState(2))


def test_softmax_cross_entropy_value_and_uniform_case():
    logits = T(np.zeros((2, 4)))
    loss, probs = softmax_cross_entropy(logits, [0, 3])
    assert float(loss.data) == pytest.approx(np.log(4))
    np.testing.assert_allclose(probs, 0.25)


def test_label_smoothing_gradient():
    rng = np.random.default_rng(3)
    z = T(rng.standard_normal((5, 4)))
    err = gradcheck(lambda: softmax_cross_entropy(z, [0, 1, 2, 3, 1], smoothing=0.1)[0] * 1.0, [z])
    assert err < 1e-6


def test_softmax_rows_sum_to_one():
    p = softmax(np.array([[1000.0, 1000.0], [-5.0, 3.0]]))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(p[0], 0.5)


# -- gradient checks (float64, central differences) -------------------------------

SHAPES = [(n, length, c) for n, length, c in [(2, 7, 3), (1, 9, 4), (3, 5, 2), (2, 11, 6), (4, 6, 1)]]


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shape", SHAPES)
def test_grad_conv1d(shape, seed):
    rng = np.random.default_rng(seed)
    n, length, c = shape
    groups = [g for g in (1, 2, 3) if c % g == 0][-1 if seed % 2 else 0]
    out_c = groups * (1 + seed % 3)
    k, s, p = [(3, 1, 1), (3, 2, 1), (1, 2, 0), (5, 1, 2)][seed]
    x = T(rng.standard_normal(shape))
    w = T(rng.standard_normal((out_c, c // groups, k)))
    b = T(rng.standard_normal(out_c))
    params = ConvParams(c, out_c, k, s, p, groups, w, b)
    assert gradcheck(lambda: conv1d(x, params), [x, w, b], seed) < 1e-4


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shape", SHAPES)
def test_grad_maxpool(shape, seed):
    x = T(np.random.default_rng(seed).permutation(np.prod(shape)).reshape(shape) * 0.1)
    k, s, p = [(3, 2, 1), (2, 2, 0), (3, 1, 1), (3, 2, 0)][seed]
    if output_length(shape[1], k, s, p) < 1:
        pytest.skip("window longer than input")
    assert gradcheck(lambda: maxpool1d(x, k, s, p), [x], seed) < 1e-4


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shape", SHAPES)
def test_grad_relu_gap_fc(shape, seed):
    rng = np.random.default_rng(seed)
    x = T(rng.standard_normal(shape))
    x.data[np.abs(x.data) < 1e-3] = 0.5  # keep away from the kink
    w = T(rng.standard_normal((shape[2], 4)))
    b = T(rng.standard_normal(4))
    assert gradcheck(lambda: relu(x), [x], seed) < 1e-4
    assert gradcheck(lambda: global_avg_pool(x), [x], seed) < 1e-4
    flat = T(rng.standard_normal((shape[0], shape[2])))
    assert gradcheck(lambda: fully_connected(flat, w, b), [flat, w, b], seed) < 1e-4


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shape", SHAPES)
def test_grad_batchnorm(shape, seed):
    if shape[0] * shape[1] < 2:
        pytest.skip()
    rng = np.random.default_rng(seed)
    x = T(rng.normal(1.0, 2.0, shape))
    s = BatchNormState(shape[2])
    s.gamma.data = rng.uniform(0.5, 2.0, shape[2])
    s.beta.data = rng.standard_normal(shape[2])
    assert gradcheck(lambda: batchnorm1d(x, s), [x, s.gamma, s.beta], seed) < 1e-4
    s.training = False
    s.running_var = rng.uniform(0.5, 2.0, shape[2])
    assert gradcheck(lambda: batchnorm1d(x, s), [x, s.gamma, s.beta], seed) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_grad_softmax_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    n, k = 1 + seed % 5, 2 + seed % 7
    z = T(rng.standard_normal((n, k)) * 3)
    y = rng.integers(0, k, n)
    assert gradcheck(lambda: softmax_cross_entropy(z, y)[0] * 1.0, [z], seed) < 1e-4


def test_grad_concat_and_slice():
    rng = np.random.default_rng(1)
    a, b = T(rng.standard_normal((2, 4, 3))), T(rng.standard_normal((2, 4, 2)))
    assert gradcheck(lambda: concat_channels([a, b]), [a, b]) < 1e-6
    assert gradcheck(lambda: slice_channels(a, 1, 3), [a]) < 1e-6


# -- grouped convolution equals the explicit split-transform-merge ----------------

@pytest.mark.parametrize("cardinality", [1, 2, 5, 7])
def test_grouped_conv_matches_split_oracle(cardinality):
    rng = np.random.default_rng(cardinality)
    width = cardinality * 3
    x = Tensor(rng.standard_normal((3, 16, width)))
    w = Tensor(rng.standard_normal((width, 3, 3)))
    b = Tensor(rng.standard_normal(width))
    grouped = conv1d(x, ConvParams(width, width, 3, 2, 1, cardinality, w, b)).data
    per = width // cardinality
    paths = []
    for g in range(cardinality):
        sl = slice(g * per, (g + 1) * per)
        p = ConvParams(per, per, 3, 2, 1, 1, Tensor(w.data[sl]), Tensor(b.data[sl]))
        paths.append(conv1d(slice_channels(x, g * per, (g + 1) * per), p))
    merged = concat_channels(paths).data
    assert np.max(np.abs(grouped - merged)) <= 1e-10


# -- properties --------------------------------------------------------------------

@given(st.integers(1, 4), st.integers(3, 20), st.integers(1, 6), st.integers(0, 2**31))
def test_relu_idempotent_and_nonnegative(n, length, c, seed):
    x = Tensor(np.random.default_rng(seed).standard_normal((n, length, c)))
    y = relu(x).data
    assert (y >= 0).all()
    np.testing.assert_array_equal(relu(Tensor(y)).data, y)


@given(st.integers(1, 3), st.integers(4, 30), st.sampled_from([1, 2, 4]), st.integers(0, 2**31))
def test_conv_is_linear_in_input(n, length, c, seed):
    rng = np.random.default_rng(seed)
    p = ConvParams(c, 2 * c, 3, 1, 1, 1, Tensor(rng.standard_normal((2 * c, c, 3))))
    a, b = rng.standard_normal((2, n, length, c))
    lhs = conv1d(Tensor(a + 2 * b), p).data
    rhs = conv1d(Tensor(a), p).data + 2 * conv1d(Tensor(b), p).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@given(st.integers(0, 2**63 - 1), st.text(min_size=1, max_size=8))
def test_named_streams_are_reproducible_and_independent(seed, name):
    a = Rng(seed).stream(name).integers(0, 2**62, size=4)
    b = Rng(seed).stream(name).integers(0, 2**62, size=4)
    np.testing.assert_array_equal(a, b)
    other = Rng(seed).stream(name + "x").integers(0, 2**62, size=4)
    assert not np.array_equal(a, other)


def test_rng_state_round_trip():
    r = Rng(5).stream("crop")
    state = r.get_state()
    first = r.integers(0, 100, 10)
    r.set_state(state)
    np.testing.assert_array_equal(first, r.integers(0, 100, 10))


def test_thread_limit_matches_reference():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((16, 64, 8)))
    p = ConvParams(8, 16, 3, 1, 1, 1, Tensor(rng.standard_normal((16, 8, 3))))
    with threads(1):
        ref = conv1d(x, p).data
    with threads(2):
        par = conv1d(x, p).data
    np.testing.assert_allclose(par, ref, rtol=1e-6)
