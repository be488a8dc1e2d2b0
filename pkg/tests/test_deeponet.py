import numpy as np
import pytest

from folearn import deeponet, neural
from folearn.deeponet import DeepONetConfig, DeepONetParams, deeponet_eval, init_deeponet, loss_and_grads
from folearn.errors import DimensionMismatchError
from folearn.mesh import build_structured_grid
from folearn.microstructure import SampleSet


def linear_params(b_vec, t_vec):
    """Networks with a single linear layer and zero weights returning fixed vectors."""
    b_vec, t_vec = np.asarray(b_vec, float), np.asarray(t_vec, float)
    branch = neural.MlpParams((np.zeros((len(b_vec), 3)),), (b_vec,), ("linear",))
    trunk = neural.MlpParams((np.zeros((len(t_vec), 2)),), (t_vec,), ("linear",))
    return DeepONetParams(branch, trunk, len(b_vec) // 2)


def test_p1_dot_products():
    U, V = deeponet_eval(linear_params([2, 3], [0.5, -1]), np.ones(3), np.array([0.2, 0.4]))
    assert U == 1.0 and V == -3.0


def test_zero_branch_output():
    U, V = deeponet_eval(linear_params([0, 0, 0, 0], [1, 2, 3, 4]), np.ones(3), np.random.rand(5, 2))
    assert np.all(U == 0) and np.all(V == 0)


def test_matches_naive_double_loop():
    cfg = DeepONetConfig(hidden=(6, 5), trunk_hidden=(4, 4), p=3, seed=4)
    params = init_deeponet(7, 2, cfg)
    rng = np.random.default_rng(0)
    E = rng.uniform(0.1, 1, (3, 7))
    X = rng.random((5, 2))
    U, V = deeponet_eval(params, E, X)
    for i in range(3):
        b = neural.forward(params.branch, E[i])[0]
        for j in range(5):
            t = neural.forward(params.trunk, X[j])[0]
            u = sum(b[k] * t[k] for k in range(3))
            v = sum(b[k] * t[k] for k in range(3, 6))
            assert U[i, j] == pytest.approx(u, rel=1e-14, abs=1e-15)
            assert V[i, j] == pytest.approx(v, rel=1e-14, abs=1e-15)


def test_output_linear_in_branch_output():
    params = linear_params([1.0, -2.0, 0.5, 3.0], [0.3, 0.7, -0.2, 0.9])
    scaled = linear_params([2.5, -5.0, 1.25, 7.5], [0.3, 0.7, -0.2, 0.9])
    a = deeponet_eval(params, np.ones(3), np.zeros(2))
    b = deeponet_eval(scaled, np.ones(3), np.zeros(2))
    np.testing.assert_allclose(b, 2.5 * np.array(a), rtol=1e-15)


def test_gradients_match_finite_differences():
    cfg = DeepONetConfig(hidden=(4,), trunk_hidden=(3,), p=2, seed=1)
    params = init_deeponet(5, 2, cfg)
    rng = np.random.default_rng(2)
    E, X = rng.uniform(0.1, 1, (3, 5)), rng.random((4, 2))
    Ut, Vt = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    _, g = loss_and_grads(params, E, X, Ut, Vt)
    flat = np.concatenate([neural.flatten(g.branch), neural.flatten(g.trunk)])
    theta = np.concatenate([neural.flatten(params.branch), neural.flatten(params.trunk)])
    nb = params.branch.n_params

    def loss_at(th):
        p = DeepONetParams(neural.unflatten(params.branch, th[:nb]), neural.unflatten(params.trunk, th[nb:]), 2)
        return loss_and_grads(p, E, X, Ut, Vt)[0]

    h = 1e-6
    fd = np.array([(loss_at(theta + h * e) - loss_at(theta - h * e)) / (2 * h) for e in np.eye(theta.size)])
    assert np.linalg.norm(flat - fd) / np.linalg.norm(fd) < 1e-5


def test_loss_definition():
    params = linear_params([1, 2], [3, 4])
    E, X = np.ones((2, 3)), np.zeros((5, 2))
    Ut, Vt = np.zeros((2, 5)), np.ones((2, 5))
    # U = 3, V = 8 everywhere -> mean over I*N of 9 + 49
    assert loss_and_grads(params, E, X, Ut, Vt)[0] == pytest.approx(58.0)


def test_default_architecture():
    params = init_deeponet(121, 2, DeepONetConfig())
    assert params.branch.layer_sizes == (121, 20, 20, 20, 20, 20, 20, 20)
    assert params.trunk.layer_sizes == (2, 20, 20, 20, 20, 20, 20, 20)
    assert params.p == 10 and params.branch.activations[-1] == "linear"


def test_mismatched_widths_rejected():
    with pytest.raises(DimensionMismatchError):
        DeepONetParams(neural.init_params([3, 4]), neural.init_params([2, 6]), 2)
    with pytest.raises(DimensionMismatchError):
        deeponet_eval(init_deeponet(4, 2, DeepONetConfig(hidden=(3,), trunk_hidden=(3,), p=1)), np.ones(5), np.ones(2))


def _toy(n_samples=1):
    mesh = build_structured_grid(3, 1.0)
    rng = np.random.default_rng(5)
    E = rng.uniform(0.1, 1, (n_samples, 9))
    U = np.column_stack([0.05 * mesh.nodes[:, 0], 0.02 * mesh.nodes[:, 1] ** 2]).ravel()
    return mesh, SampleSet(E, "nodal_E", 0), np.tile(U, (n_samples, 1))


def test_single_sample_memorization():
    mesh, samples, U = _toy()
    cfg = DeepONetConfig(hidden=(20, 20), trunk_hidden=(20, 20), p=5, batch_size=1, epochs=3000, lr=1e-3)
    model, hist = deeponet.train_deeponet(samples, U, mesh, cfg)
    assert hist[-1] < 1e-6
    pred = deeponet.predict(model, samples.values[0])
    assert np.abs(pred.U - U[0]).max() < 3e-3


def test_training_deterministic_and_resumable():
    mesh, samples, U = _toy(4)
    cfg = DeepONetConfig(hidden=(5,), trunk_hidden=(5,), p=2, batch_size=3, epochs=4)
    _, h1 = deeponet.train_deeponet(samples, U, mesh, cfg)
    _, h2 = deeponet.train_deeponet(samples, U, mesh, cfg)
    assert h1 == h2
    m, _ = deeponet.train_deeponet(samples, U, mesh, cfg, epochs=1)
    m, _ = deeponet.train_deeponet(samples, U, mesh, cfg, model=m, epochs=3)
    assert m.history == h1
