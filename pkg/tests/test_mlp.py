import warnings

import numpy as np
import pytest

from netinfer.errors import ConfigError, NumericError
from netinfer.mlp import LocalModel, TrainConfig, train
from netinfer.preprocess import VectorFieldSamples


def small_net(seed=0):
    net = LocalModel(3, hidden=(6, 5), seed=seed)
    rng = np.random.default_rng(seed)
    net.fit_scaling(rng.normal(1, 2, size=(40, 3)), rng.normal(-1, 3, size=(40, 3)))
    return net


def test_default_architecture_and_init_bounds():
    net = LocalModel(3)
    assert net.layer_dims == [3, 128, 128, 3]
    for W in net.weights:
        assert np.all(np.abs(W) <= np.sqrt(6 / (W.shape[0] + W.shape[1])))
    assert all(np.all(b == 0) for b in net.biases)


def test_parameters_are_views_of_flat_buffer():
    net = small_net()
    flat = net.get_flat()
    flat[:] = np.arange(flat.size)
    net.set_flat(flat)
    assert net.weights[0][0, 1] == 1.0
    assert net.biases[-1][-1] == flat.size - 1
    with pytest.raises(ValueError):
        net.set_flat(np.zeros(3))


def test_parameter_gradients_match_finite_differences():
    net = small_net(1)
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    _, g = net.loss_and_grads(x, y)
    theta = net.get_flat()
    fd = np.empty_like(theta)
    for p in range(theta.size):
        e = np.zeros_like(theta)
        e[p] = 1e-6
        net.set_flat(theta + e)
        lp = net.loss_and_grads(x, y)[0]
        net.set_flat(theta - e)
        lm = net.loss_and_grads(x, y)[0]
        fd[p] = (lp - lm) / 2e-6
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-9)


def test_input_jacobian_matches_finite_differences():
    net = small_net(3)
    x = np.random.default_rng(4).normal(size=(2, 5, 3))
    y, J = net.forward_and_jacobian(x)
    assert J.shape == (2, 5, 3, 3) and np.allclose(y, net.forward(x))
    Jfd = np.empty_like(J)
    for d in range(3):
        e = np.zeros(3)
        e[d] = 1e-6
        Jfd[..., d] = (net.forward(x + e) - net.forward(x - e)) / 2e-6
    assert np.allclose(J, Jfd, rtol=1e-5, atol=1e-8)


def test_forward_chunking_consistent():
    net = small_net(5)
    x = np.random.default_rng(6).normal(size=(70000, 3))
    y = net.forward(x)
    assert np.allclose(y[-10:], net.forward(x[-10:]))


def test_non_finite_input():
    with pytest.raises(NumericError):
        small_net().forward(np.array([[np.inf, 0, 0]]))


def lorenz_like_samples(n=3000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    V = np.stack([X[:, 1] - X[:, 0], X[:, 0] * (1 - X[:, 2]) - X[:, 1], X[:, 0] * X[:, 1] - X[:, 2]], 1)
    return VectorFieldSamples(X, V)


@pytest.mark.parametrize("optimizer", ["adam", "sgd"])
def test_training_reduces_error(optimizer):
    s = lorenz_like_samples()
    net = LocalModel(3, hidden=(32, 32), seed=0)
    rate = 0.001 if optimizer == "adam" else 0.01
    rep = train(net, s, TrainConfig(optimizer=optimizer, learning_rate=rate, refit_rate=rate / 5,
                                    epochs=8), rng=np.random.default_rng(1))
    assert len(rep.epoch_mse) == 8 and rep.converged
    assert rep.final_mse < 0.5 * rep.initial_mse


def test_training_is_deterministic():
    s = lorenz_like_samples(500)
    outs = []
    for _ in range(2):
        net = LocalModel(3, hidden=(8, 8), seed=3)
        train(net, s, TrainConfig(epochs=2), rng=np.random.default_rng(9))
        outs.append(net.get_flat())
    assert np.array_equal(*outs)


def test_scaling_fit_once_then_kept():
    s = lorenz_like_samples(300)
    net = LocalModel(3, hidden=(4, 4))
    train(net, s, TrainConfig(epochs=1))
    mean = net.in_mean.copy()
    shifted = VectorFieldSamples(s.states + 5, s.velocities)
    train(net, shifted, TrainConfig(epochs=1), fit_scaling=False)
    assert np.array_equal(net.in_mean, mean)


def test_config_checks():
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        TrainConfig(learning_rate=0.001, refit_rate=0.01)
    assert w
    with pytest.raises(ValueError):
        train(LocalModel(3), VectorFieldSamples(np.zeros((0, 3)), np.zeros((0, 3))), TrainConfig())


def test_checkpoint_roundtrip(tmp_path):
    net = small_net(7)
    net.save(tmp_path / "m.bin", {"seed": 7})
    back = LocalModel.load(tmp_path / "m.bin")
    x = np.random.default_rng(8).normal(size=(5, 3))
    assert np.array_equal(back.forward(x), net.forward(x))
    assert back.layer_dims == net.layer_dims
    (tmp_path / "bad.bin").write_bytes(b"hello\n")
    with pytest.raises(ValueError):
        LocalModel.load(tmp_path / "bad.bin")


def test_copy_is_independent():
    net = small_net(9)
    c = net.copy()
    c.weights[0][...] = 0
    assert np.any(net.weights[0] != 0)
