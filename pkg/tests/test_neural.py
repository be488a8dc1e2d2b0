import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from folearn import neural
from folearn.errors import DimensionMismatchError, StaleTapeError


def naive_forward(params, x):
    """Straight-line evaluation, one neuron at a time."""
    h = list(x)
    for W, b, act in zip(params.weights, params.biases, params.activations):
        out = []
        for m in range(W.shape[0]):
            z = b[m] + sum(W[m, n] * h[n] for n in range(W.shape[1]))
            s = 1.0 / (1.0 + np.exp(-z))
            out.append({"swish": z * s, "tanh": np.tanh(z), "sigmoid": s, "linear": z}[act])
        h = out
    return np.array(h)


def fd_check(params, X, G, step=1e-6):
    """Largest relative error between backward and central differences of sum(G * y)."""
    _, tape = neural.forward(params, X)
    grads = neural.flatten(neural.backward(params, tape, G))
    theta = neural.flatten(params)
    fd = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += step
        tm[k] -= step
        fp = np.sum(G * neural.forward(neural.unflatten(params, tp), X)[0])
        fm = np.sum(G * neural.forward(neural.unflatten(params, tm), X)[0])
        fd[k] = (fp - fm) / (2 * step)
    return np.linalg.norm(grads - fd) / np.linalg.norm(fd)


def test_zero_network_outputs_zero():
    p = neural.init_params([3, 4, 2], seed=0)
    p = p.replace([0 * w for w in p.weights], p.biases)
    assert np.all(neural.forward(p, np.array([1.0, -2.0, 5.0]))[0] == 0)


def test_single_linear_layer():
    W = np.array([[1.0, 2.0], [-1.0, 0.5]])
    b = np.array([0.1, -0.2])
    p = neural.MlpParams((W,), (b,), ("linear",))
    x = np.array([0.3, 0.7])
    np.testing.assert_allclose(neural.forward(p, x)[0], W @ x + b, rtol=1e-15)


@pytest.mark.parametrize("act", neural.ACTIVATIONS)
def test_matches_naive_evaluator(act):
    p = neural.init_params([4, 6, 5, 3], activation=act, seed=2)
    p = p.replace(p.weights, [np.random.default_rng(1).standard_normal(b.shape) for b in p.biases])
    x = np.random.default_rng(3).standard_normal(4)
    np.testing.assert_allclose(neural.forward(p, x)[0], naive_forward(p, x), rtol=1e-14, atol=1e-15)


def test_batch_forward_equals_rowwise():
    p = neural.init_params([5, 7, 3], seed=4)
    X = np.random.default_rng(0).standard_normal((6, 5))
    Y, _ = neural.forward(p, X)
    for r in range(6):
        np.testing.assert_allclose(Y[r], neural.forward(p, X[r])[0], rtol=1e-14)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        neural.forward(neural.init_params([3, 2]), np.ones(4))


def test_zero_upstream_gradient():
    p = neural.init_params([3, 5, 2], seed=1)
    _, tape = neural.forward(p, np.ones(3))
    g = neural.backward(p, tape, np.zeros(2))
    assert all(np.all(w == 0) for w in g.weights) and all(np.all(b == 0) for b in g.biases)


def test_scalar_linear_chain_rule():
    p = neural.MlpParams((np.array([[1.7]]),), (np.array([0.0]),), ("linear",))
    _, tape = neural.forward(p, np.array([0.6]))
    g = neural.backward(p, tape, np.array([2.5]))
    assert g.weights[0][0, 0] == pytest.approx(2.5 * 0.6)
    assert g.biases[0][0] == pytest.approx(2.5)


@pytest.mark.parametrize("act", neural.ACTIVATIONS)
def test_gradients_match_finite_differences(act):
    rng = np.random.default_rng(9)
    p = neural.init_params([3, 5, 4, 2], activation=act, seed=5)
    p = p.replace(p.weights, [0.3 * rng.standard_normal(b.shape) for b in p.biases])
    X = rng.standard_normal((4, 3))
    G = rng.standard_normal((4, 2))
    assert fd_check(p, X, G) < 1e-6


def test_subnet_bank_gradients_and_concatenation():
    rng = np.random.default_rng(2)
    bank = neural.init_subnet_bank(4, [3, 5, 2], seed=3)
    X = rng.standard_normal((2, 3))
    Y, _ = neural.forward(bank, X)
    cols = np.column_stack([neural.forward(bank.subnet(i), X)[0][:, 0] for i in range(4)])
    np.testing.assert_allclose(Y, cols, rtol=1e-14)
    assert fd_check(bank, X, rng.standard_normal((2, 4))) < 1e-6


def test_stale_tape():
    p = neural.init_params([3, 4, 2], seed=0)
    q = neural.init_params([3, 6, 2], seed=0)
    _, tape = neural.forward(p, np.ones(3))
    with pytest.raises(StaleTapeError):
        neural.backward(q, tape, np.ones(2))
    with pytest.raises(StaleTapeError):
        neural.backward(p, tape, np.ones(3))


def test_swish_derivative_formula():
    z = np.linspace(-6, 6, 101)
    s = 1 / (1 + np.exp(-z))
    _, d = neural.activate("swish", z)
    np.testing.assert_allclose(d, s + z * s * (1 - s), rtol=1e-13, atol=1e-15)


def test_input_gradient():
    rng = np.random.default_rng(6)
    p = neural.init_params([4, 6, 3], seed=2)
    x = rng.standard_normal(4)
    g = rng.standard_normal(3)
    _, tape = neural.forward(p, x)
    ana = neural.input_gradient(p, tape, g)
    h = 1e-6
    fd = [(g @ neural.forward(p, x + h * e)[0] - g @ neural.forward(p, x - h * e)[0]) / (2 * h) for e in np.eye(4)]
    np.testing.assert_allclose(ana, fd, rtol=1e-6)


def test_adam_zero_gradient_keeps_params():
    p = neural.init_params([3, 2], seed=0)
    st_ = neural.adam_init(p)
    st_.m[:] = 1.0
    st_.v[:] = 4.0
    zero = p.replace([0 * w for w in p.weights], [0 * b for b in p.biases])
    q, new = neural.adam_step(p, zero, st_, 1e-3)
    # moments decay but the step is nonzero only through the old moments
    np.testing.assert_allclose(new.m, 0.9)
    np.testing.assert_allclose(new.v, 4.0 * 0.999)
    st0 = neural.adam_init(p)
    q, new = neural.adam_step(p, zero, st0, 1e-3)
    assert np.array_equal(neural.flatten(q), neural.flatten(p)) and new.step == 1


def test_adam_first_step_is_lr_sign():
    p = neural.init_params([3, 2], seed=0)
    g = neural.unflatten(p, np.random.default_rng(1).standard_normal(p.n_params))
    q, _ = neural.adam_step(p, g, neural.adam_init(p), 0.01)
    delta = neural.flatten(q) - neural.flatten(p)
    np.testing.assert_allclose(delta, -0.01 * np.sign(neural.flatten(g)), rtol=1e-6)


def test_adam_scalar_toy_problem():
    p = neural.MlpParams((np.array([[0.0]]),), (np.array([0.0]),), ("linear",))
    state = neural.adam_init(p)
    for _ in range(100):
        w = p.weights[0][0, 0]
        g = p.replace([np.array([[2 * (w - 3)]])], [np.zeros(1)])
        p, state = neural.adam_step(p, g, state, 0.1)
    assert abs(p.weights[0][0, 0] - 3) < 0.2


def test_adam_folded_bias_correction_matches_textbook():
    rng = np.random.default_rng(0)
    p = neural.init_params([2, 3], seed=0)
    state = neural.adam_init(p)
    theta, m, v = neural.flatten(p), np.zeros(p.n_params), np.zeros(p.n_params)
    for t in range(1, 6):
        g = rng.standard_normal(p.n_params)
        p, state = neural.adam_step(p, neural.unflatten(p, g), state, 1e-2)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(neural.flatten(p), theta, rtol=1e-13)


def test_init_determinism_and_bounds():
    a = neural.init_params([121, 10], seed=7)
    b = neural.init_params([121, 10], seed=7)
    assert np.array_equal(a.weights[0], b.weights[0])
    assert np.abs(a.weights[0]).max() <= np.sqrt(6 / 131)
    assert np.all(a.biases[0] == 0)


def test_init_mean_is_centred():
    w = neural.init_params([100, 100], seed=3).weights[0].ravel()
    limit = np.sqrt(6 / 200)
    se = limit / np.sqrt(3) / np.sqrt(w.size)
    assert abs(w.mean()) < 3 * se


@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_flatten_round_trip(sizes, seed):
    p = neural.init_params(sizes, seed=seed)
    q = neural.unflatten(p, neural.flatten(p))
    assert all(np.array_equal(a, b) for a, b in zip(p.weights, q.weights))
    assert neural.flatten(p).size == p.n_params
