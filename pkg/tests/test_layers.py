import math

import numpy as np
import pytest

from lwnn.errors import ConfigError, DataError, DimensionError, StateError
from lwnn.layers import (
    DenseLayer,
    NetworkConfig,
    WaveletNetwork,
    WaveletNeuron,
    dropout,
    init_params,
    neuron_backward,
    neuron_forward,
    param_count,
    param_names,
    softmax_xent,
)


def expit(z):
    return 1.0 / (1.0 + math.exp(-z))


@pytest.mark.parametrize("c", [0.0, 0.3, 1.0])
def test_neuron_on_constant_plane_sigmoid(c):
    out = neuron_forward(np.full((1, 4, 4, 1), c), WaveletNeuron(0.0, 0.0, "sigmoid"))
    assert out.shape == (1, 2, 2, 4)
    np.testing.assert_allclose(out[..., 0], expit(2 * c), atol=1e-12)
    np.testing.assert_allclose(out[..., 1:], 0.5, atol=1e-12)


def test_neuron_on_constant_plane_centered():
    out = neuron_forward(np.full((1, 4, 4, 1), 0.3), WaveletNeuron(0.0, 0.0, "centered_sigmoid"))
    np.testing.assert_allclose(out[..., 0], expit(0.6) - 0.5, atol=1e-12)
    np.testing.assert_allclose(out[..., 1:], 0.0, atol=1e-12)


def test_neuron_codomain():
    x = np.random.default_rng(0).normal(scale=3.0, size=(2, 9, 7, 2))
    plain = WaveletNeuron(1.1, 4.0, "sigmoid").forward(x)
    centered = WaveletNeuron(1.1, 4.0, "centered_sigmoid").forward(x)
    assert plain.min() > 0 and plain.max() < 1
    assert centered.min() > -0.5 and centered.max() < 0.5
    np.testing.assert_array_equal(plain - 0.5, centered)


def test_unknown_activation_rejected():
    with pytest.raises(ConfigError):
        WaveletNeuron(0.0, 0.0, "tanh")
    with pytest.raises(ConfigError):
        NetworkConfig(activation="tanh")


def test_three_neurons_on_mnist_shape():
    x = np.zeros((2, 28, 28, 1))
    for a in (0.1, 2.0, 5.0):
        x = WaveletNeuron(a, 1.0).forward(x)
    assert x.shape == (2, 4, 4, 64)
    assert NetworkConfig().path_output_shape() == (4, 4, 64)
    assert NetworkConfig().flat_features() == 8192


@pytest.mark.parametrize("activation", ["sigmoid", "centered_sigmoid"])
def test_neuron_angle_gradients_match_finite_differences(activation):
    x = np.random.default_rng(4).normal(size=(1, 8, 8, 1))
    a, b = 0.9, 2.6

    def loss(a_, b_):
        return float(WaveletNeuron(a_, b_, activation).forward(x, keep_cache=False).sum())

    neuron = WaveletNeuron(a, b, activation)
    out = neuron_forward(x, neuron)
    _, ga, gb = neuron_backward(np.ones_like(out), neuron)
    step = 1e-6
    fd_a = (loss(a + step, b) - loss(a - step, b)) / (2 * step)
    fd_b = (loss(a, b + step) - loss(a, b - step)) / (2 * step)
    assert abs(ga - fd_a) / max(abs(fd_a), 1e-8) < 1e-5
    assert abs(gb - fd_b) / max(abs(fd_b), 1e-8) < 1e-5


def test_neuron_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 5, 7, 2))
    w = rng.normal(size=(1, 3, 4, 8))
    neuron = WaveletNeuron(0.4, 3.3)
    neuron.forward(x)
    dx, _, _ = neuron.backward(w)
    assert dx.shape == x.shape
    step = 1e-6
    for idx in [(0, 0, 0, 0), (0, 4, 6, 1), (0, 2, 3, 0)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        fd = (np.sum(w * neuron.forward(xp, False)) - np.sum(w * neuron.forward(xm, False))) / (2 * step)
        assert abs(dx[idx] - fd) < 1e-7


def test_neuron_zero_grad():
    neuron = WaveletNeuron(0.4, 3.3)
    out = neuron.forward(np.random.default_rng(1).normal(size=(2, 6, 6, 1)))
    dx, ga, gb = neuron.backward(np.zeros_like(out))
    assert not dx.any() and ga == 0 and gb == 0


def test_neuron_backward_without_forward():
    neuron = WaveletNeuron(0.0, 0.0)
    with pytest.raises(StateError):
        neuron.backward(np.zeros((1, 1, 1, 4)))
    neuron.forward(np.zeros((1, 2, 2, 1)))
    neuron.backward(np.zeros((1, 1, 1, 4)))
    with pytest.raises(StateError):
        neuron.backward(np.zeros((1, 1, 1, 4)))


def test_neuron_rejects_bad_rank():
    with pytest.raises(DimensionError):
        WaveletNeuron(0.0, 0.0).forward(np.zeros((4, 4)))


def small_net(activation, seed=0):
    config = NetworkConfig(
        paths=1, fc_widths=(4,), classes=2, input_shape=(8, 8, 1), dropout_keep=1.0, activation=activation
    )
    return WaveletNetwork.initialize(config, np.random.default_rng(seed))


def numeric_gradient(net, x, y, name, step=1e-5):
    p = net.params[name]
    grad = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        orig = p[idx]
        p[idx] = orig + step
        lp, _ = softmax_xent(net.forward(x), y)
        p[idx] = orig - step
        lm, _ = softmax_xent(net.forward(x), y)
        p[idx] = orig
        grad[idx] = (lp - lm) / (2 * step)
    return grad


@pytest.mark.parametrize("activation", ["sigmoid", "centered_sigmoid"])
def test_full_network_gradient_check(activation):
    net = small_net(activation)
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(3, 8, 8, 1))
    y = np.array([0, 1, 1])
    _, g = softmax_xent(net.forward(x, train=True), y)
    grads = net.backward(g)
    assert list(grads) == param_names(net.config)
    for name in grads:
        fd = numeric_gradient(net, x, y, name)
        scale = max(np.abs(fd).max(), np.abs(grads[name]).max(), 1e-8)
        assert np.abs(grads[name] - fd).max() / scale < 1e-4, name


def test_backward_is_linear_in_grad_logits():
    net = small_net("centered_sigmoid")
    x = np.random.default_rng(2).uniform(size=(2, 8, 8, 1))
    g = np.random.default_rng(3).normal(size=(2, 2))
    net.forward(x, train=True)
    once = net.backward(g)
    net.forward(x, train=True)
    twice = net.backward(2 * g)
    net.forward(x, train=True)
    zero = net.backward(np.zeros_like(g))
    for name in once:
        np.testing.assert_allclose(twice[name], 2 * once[name], rtol=1e-12, atol=1e-15)
        assert not np.any(zero[name])


def test_network_backward_state_errors():
    net = small_net("sigmoid")
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 2)))
    x = np.zeros((1, 8, 8, 1))
    net.forward(x)  # eval mode leaves no cache
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 2)))
    net.forward(x, train=True)
    net.backward(np.zeros((1, 2)))
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 2)))


def test_eval_is_deterministic_and_keep_one_train_matches():
    net = small_net("centered_sigmoid")
    x = np.random.default_rng(5).uniform(size=(4, 8, 8, 1))
    a, b = net.forward(x), net.forward(x)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(net.forward(x, train=True, rng=np.random.default_rng(0)), a)


def test_dropout_in_network_uses_rng():
    config = NetworkConfig(paths=2, fc_widths=(16, 16), classes=3, input_shape=(8, 8, 1))
    net = WaveletNetwork.initialize(config, np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(size=(4, 8, 8, 1))
    t1 = net.forward(x, train=True, rng=np.random.default_rng(7))
    t2 = net.forward(x, train=True, rng=np.random.default_rng(7))
    np.testing.assert_array_equal(t1, t2)
    assert not np.array_equal(t1, net.forward(x))


def test_mnist_logits_shape():
    net = WaveletNetwork.initialize(NetworkConfig(), np.random.default_rng(0))
    assert net.forward(np.zeros((3, 28, 28))).shape == (3, 10)
    with pytest.raises(ConfigError):
        net.forward(np.zeros((3, 32, 32, 1)))


def test_path_permutation_symmetry():
    config = NetworkConfig(paths=3, fc_widths=(5,), classes=4, input_shape=(8, 8, 1))
    net = WaveletNetwork.initialize(config, np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(size=(2, 8, 8, 1))
    perm = [2, 0, 1]
    params = {k: v.copy() for k, v in net.params.items()}
    for new, old in enumerate(perm):
        for lvl in range(3):
            for ang in ("alpha", "beta"):
                params[f"path{new}.level{lvl}.{ang}"] = net.params[f"path{old}.level{lvl}.{ang}"].copy()
    # features are (h, w, path-major channels) flattened; permute the matching weight columns
    ph, pw, pc = config.path_output_shape()
    cols = np.arange(config.flat_features()).reshape(ph, pw, config.paths, pc)
    params["dense0.weight"] = net.params["dense0.weight"][:, cols[:, :, perm, :].reshape(-1)]
    permuted = WaveletNetwork(config, params)
    np.testing.assert_allclose(permuted.forward(x), net.forward(x), rtol=0, atol=1e-12)


def quoted_interval(text):
    """Range of exact counts consistent with a rounded figure like '66k' or '1.1M', widened by 1%."""
    scale = {"k": 1e3, "M": 1e6}[text[-1]]
    digits = text[:-1]
    unit = 10.0 ** -len(digits.split(".")[1]) if "." in digits else 1.0
    value = float(digits) * scale
    # rounding and truncation readings of the last digit are both accepted
    return (value - unit * scale / 2) * 0.99, (value + unit * scale) * 1.01


@pytest.mark.parametrize(
    "paths, expected, quoted",
    [(2, 66_966, "66k"), (4, 132_514, "132k"), (6, 198_062, "198k"), (8, 263_610, "264k"),
     (16, 525_802, "525.7k"), (32, 1_050_186, "1.1M")],
)
def test_param_count_matches_table(paths, expected, quoted):
    n = param_count(NetworkConfig(paths=paths))
    assert n == expected
    lo, hi = quoted_interval(quoted)
    assert lo <= n <= hi
    assert sum(p.size for p in init_params(NetworkConfig(paths=paths), np.random.default_rng(0)).values()) == n


def test_single_path_count_documented_mismatch():
    assert param_count(NetworkConfig(paths=1)) == 34_192
    assert param_count(NetworkConfig(paths=1, fc_widths=(32,))) == 6 + (1024 * 32 + 32) + (32 * 10 + 10)


def test_init_ranges():
    params = init_params(NetworkConfig(paths=4), np.random.default_rng(0))
    for name, p in params.items():
        if name.endswith((".alpha", ".beta")):
            assert p.shape == () and 0 <= p < 2 * math.pi
        elif name.endswith("bias"):
            assert not p.any()
    w = params["dense0.weight"]
    assert np.abs(w).max() <= math.sqrt(6 / sum(w.shape))


def test_mismatched_params_rejected():
    config = NetworkConfig(paths=1, fc_widths=(4,), classes=2, input_shape=(8, 8, 1))
    params = init_params(config, np.random.default_rng(0))
    params["dense0.weight"] = params["dense0.weight"][:, :-1]
    with pytest.raises(ConfigError):
        WaveletNetwork(config, params)
    del params["dense0.weight"]
    with pytest.raises(ConfigError):
        WaveletNetwork(config, params)


@pytest.mark.parametrize("bad", [dict(paths=0), dict(levels_per_path=0), dict(dropout_keep=0.0), dict(dropout_keep=1.5)])
def test_bad_network_config(bad):
    with pytest.raises(ConfigError):
        NetworkConfig(**bad)


def test_dense_relu_backward():
    w = np.array([[1.0, -1.0], [2.0, 0.5]])
    layer = DenseLayer(w, np.array([0.0, -10.0]))
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(layer.forward(x), [[0.0, 0.0]])
    dx, dw, db = layer.backward(np.ones((1, 2)))
    assert not dx.any() and not dw.any() and not db.any()


def test_dropout_identity_cases():
    x = np.random.default_rng(0).normal(size=(5, 7))
    out, mask = dropout(x, 0.8, train=False)
    assert out is x and mask is None
    out, mask = dropout(x, 1.0, train=True, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(out, x)


def test_dropout_survivor_fraction():
    out, mask = dropout(np.ones(1_000_000), 0.8, train=True, rng=np.random.default_rng(0))
    assert abs(np.mean(out != 0) - 0.8) < 0.002
    np.testing.assert_allclose(out[out != 0], 1 / 0.8)


@pytest.mark.parametrize("keep", [0.0, -0.1, 1.01])
def test_dropout_bad_keep(keep):
    with pytest.raises(ConfigError):
        dropout(np.ones(3), keep, train=True, rng=np.random.default_rng(0))


def test_softmax_uniform_logits():
    loss, grad = softmax_xent(np.zeros((4, 10)), np.array([0, 3, 9, 5]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_softmax_large_margin():
    logits = np.array([[1000.0, 0.0, -5.0]])
    loss, grad = softmax_xent(logits, np.array([0]))
    assert loss < 1e-12 and np.isfinite(grad).all()


def test_softmax_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(0)
    _, grad = softmax_xent(rng.normal(size=(6, 5)) * 10, rng.integers(0, 5, 6))
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_softmax_label_out_of_range():
    with pytest.raises(DataError):
        softmax_xent(np.zeros((2, 3)), np.array([0, 3]))
