import numpy as np
import pytest

from neurmatch import nn
from neurmatch.nn import (
    DenseNet,
    DivergenceError,
    Layer,
    TrainConfig,
    backward,
    forward,
    gradcheck,
    init_net,
    loss_value_grad,
    net_from_dict,
    net_to_dict,
    train,
)


def manual_forward(net, x):
    """Independent evaluator: plain loops, no shared code path."""
    import math

    a = list(map(float, x))
    for layer in net.layers:
        z = []
        for row, b in zip(layer.weight, layer.bias):
            z.append(sum(w * v for w, v in zip(row, a)) + b)
        if layer.activation == "relu":
            a = [max(v, 0.0) for v in z]
        elif layer.activation == "sigmoid":
            a = [1.0 / (1.0 + math.exp(-v)) for v in z]
        else:
            a = z
    return np.array(a)


def test_forward_identity_layer():
    net = DenseNet([Layer(np.eye(3), np.zeros(3), "none")])
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(forward(net, x), x)


def test_forward_sigmoid_midpoint():
    net = DenseNet([Layer(np.array([[1.0, 1.0]]), np.array([-1.0]), "sigmoid")])
    assert forward(net, np.array([0.5, 0.5]))[0] == pytest.approx(0.5, abs=1e-15)


def test_forward_two_layer_matches_manual_oracle():
    net = init_net([3, 4, 2], ["relu", "none"], seed=42)
    x = np.ones(3)
    assert np.allclose(forward(net, x), manual_forward(net, x), atol=1e-12)


def test_forward_is_pure():
    net = init_net([5, 8, 2], ["relu", "sigmoid"], seed=1)
    x = np.random.default_rng(0).normal(size=5)
    a = forward(net, x)
    b = forward(net, x)
    assert np.array_equal(a, b)


def test_forward_dimension_error():
    net = init_net([3, 2], ["none"], seed=0)
    with pytest.raises(ValueError):
        forward(net, np.ones(4))


def test_backward_zero_grad():
    net = init_net([4, 6, 3], ["relu", "none"], seed=2)
    grads = backward(net, np.ones(4), np.zeros(3))
    for gw, gb in grads:
        assert not gw.any() and not gb.any()


def test_backward_linear_closed_form():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(2, 3))
    b = rng.normal(size=2)
    net = DenseNet([Layer(w.copy(), b.copy(), "none")])
    x = rng.normal(size=3)
    y = rng.normal(size=2)
    out = forward(net, x)
    _, g = loss_value_grad("mse", out, y)
    (gw, gb), = backward(net, x, g)
    # d/dW of |Wx + b - y|^2 is 2 (Wx + b - y) x^T
    expected_w = 2.0 * np.outer(out - y, x)
    expected_b = 2.0 * (out - y)
    assert np.allclose(gw, expected_w, atol=1e-12)
    assert np.allclose(gb, expected_b, atol=1e-12)


def test_gradcheck_linear_tight():
    net = init_net([4, 3], ["none"], seed=5)
    x = np.random.default_rng(5).normal(size=4)
    y = np.random.default_rng(6).normal(size=3)
    assert gradcheck(net, x, y, loss="mse") <= 1e-7


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_small_architectures_across_seeds(seed):
    rng = np.random.default_rng(seed)
    net = init_net([16, 64, 64, 1], ["relu", "relu", "sigmoid"], seed=seed)
    x = rng.uniform(-1.0, 1.0, size=16)
    y = np.array([float(seed % 2)])
    assert gradcheck(net, x, y, loss="bce", max_params=400, seed=seed) <= 1e-4


def test_gradcheck_relu_away_from_kinks():
    net = init_net([3, 8, 2], ["relu", "none"], seed=7)
    x = np.array([0.7, -0.4, 1.3])
    y = np.array([0.2, -0.1])
    assert gradcheck(net, x, y, loss="mse") <= 1e-4


def test_corrupted_gradient_detected():
    # doubling one analytic weight gradient must blow the relative error
    net = init_net([3, 2], ["none"], seed=9)
    x = np.array([0.5, 1.0, -0.7])
    y = np.array([0.3, 0.9])
    out = forward(net, x)
    _, g = loss_value_grad("mse", out, y)
    (gw, _), = backward(net, x, g)
    h = 1e-5
    w = net.layers[0].weight
    orig = w[0, 0]
    w[0, 0] = orig + h
    up, _ = loss_value_grad("mse", forward(net, x), y)
    w[0, 0] = orig - h
    down, _ = loss_value_grad("mse", forward(net, x), y)
    w[0, 0] = orig
    fd = (up - down) / (2 * h)
    corrupted = 2.0 * gw[0, 0]
    err = abs(corrupted - fd) / max(abs(corrupted), abs(fd), 1e-8)
    assert err > 0.1


def test_train_zero_learning_rate_keeps_parameters():
    rng = np.random.default_rng(1)
    net = init_net([2, 4, 1], ["relu", "sigmoid"], seed=1)
    x = rng.normal(size=(32, 2))
    y = (x[:, 0] > 0).astype(float)
    cfg = TrainConfig(learning_rate=0.0, batch_size=8, epochs=5, seed=0)
    trained, curve = train(net, x, y, cfg, loss="bce")
    for l0, l1 in zip(net.layers, trained.layers):
        assert np.array_equal(l0.weight, l1.weight)
        assert np.array_equal(l0.bias, l1.bias)
    assert len(curve) == 5
    assert max(curve) - min(curve) < 1e-12


def test_train_separable_logistic():
    rng = np.random.default_rng(0)
    n = 120
    x = np.vstack([rng.normal([-2, -2], 0.5, size=(n, 2)), rng.normal([2, 2], 0.5, size=(n, 2))])
    y = np.concatenate([np.zeros(n), np.ones(n)])
    net = init_net([2, 1], ["sigmoid"], seed=0)
    cfg = TrainConfig(learning_rate=0.05, batch_size=32, epochs=200, seed=0)
    trained, curve = train(net, x, y, cfg, loss="bce")
    assert curve[-1] < 0.1


def test_train_deterministic():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(64, 3))
    y = rng.uniform(size=(64, 1))
    cfg = TrainConfig(learning_rate=1e-3, batch_size=16, epochs=10, seed=123)
    net = init_net([3, 8, 1], ["relu", "sigmoid"], seed=4)
    t1, c1 = train(net, x, y, cfg, loss="bce")
    t2, c2 = train(net, x, y, cfg, loss="bce")
    assert c1 == c2
    for l1, l2 in zip(t1.layers, t2.layers):
        assert np.array_equal(l1.weight, l2.weight)
        assert np.array_equal(l1.bias, l2.bias)


def test_train_divergence_error_names_epoch():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(16, 2))
    y = rng.normal(size=(16, 1))
    net = init_net([2, 4, 1], ["relu", "none"], seed=0)
    cfg = TrainConfig(learning_rate=1e3, batch_size=4, epochs=50, seed=0, optimizer="sgd")
    with pytest.raises(DivergenceError) as err:
        train(net, x, y, cfg, loss="mse")
    assert err.value.epoch >= 0


def test_train_smoothed_loss_nonincreasing():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(200, 4))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
    net = init_net([4, 16, 1], ["relu", "sigmoid"], seed=0)
    cfg = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=40, seed=0)
    _, curve = train(net, x, y, cfg, loss="bce")
    smooth = np.convolve(curve, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) < 1e-3)


def test_sgd_optimizer_runs():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(64, 2))
    y = (x.sum(axis=1) > 0).astype(float)
    net = init_net([2, 1], ["sigmoid"], seed=0)
    cfg = TrainConfig(learning_rate=0.5, batch_size=16, epochs=50, seed=0, optimizer="sgd")
    _, curve = train(net, x, y, cfg, loss="bce")
    assert curve[-1] < curve[0]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")


def test_model_json_roundtrip(tmp_path):
    net = init_net([5, 7, 2], ["relu", "sigmoid"], seed=11)
    d = net_to_dict(net)
    net2 = net_from_dict(d)
    for l1, l2 in zip(net.layers, net2.layers):
        assert np.array_equal(l1.weight, l2.weight)
        assert np.array_equal(l1.bias, l2.bias)
        assert l1.activation == l2.activation
    path = tmp_path / "net.json"
    nn.save_net(net, path)
    net3 = nn.load_net(path)
    x = np.random.default_rng(0).normal(size=5)
    assert np.array_equal(forward(net, x), forward(net3, x))


def test_model_version_rejected():
    net = init_net([2, 1], ["none"], seed=0)
    d = net_to_dict(net)
    d["format_version"] = 99
    with pytest.raises(ValueError):
        net_from_dict(d)


def test_layer_chain_validation():
    with pytest.raises(ValueError):
        DenseNet(
            [
                Layer(np.zeros((3, 2)), np.zeros(3), "relu"),
                Layer(np.zeros((2, 4)), np.zeros(2), "none"),
            ]
        )
