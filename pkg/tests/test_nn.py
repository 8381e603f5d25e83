import numpy as np
import pytest

from alarmdet.nn import (LayerSpec, Network, NetworkError, TrainConfig, TrainingDiverged, backward_update,
                         balance_training_set, build_class_specific_input, build_generic_input, build_network,
                         gradient_check, stack_context, train)
from alarmdet.nn.engine import LAYER_KINDS, one_hot
from alarmdet.nn.inputs import N_MEL, mel_supports, pad_supports
from alarmdet.registry import default_registry


def random_net(kind: str, rng: np.random.Generator, seed: int) -> Network:
    """A small network whose first trainable or pooling layer is ``kind``."""
    g = int(rng.integers(2, 5))
    w = int(rng.integers(2, 5))
    act = str(rng.choice(["sigmoid", "linear"]))
    shared = bool(rng.integers(0, 2))
    if kind == "fully_connected":
        layers = [LayerSpec("fully_connected", g * w, g, activation=act)]
    elif kind == "max_pool_uniform":
        layers = [LayerSpec("max_pool_uniform", g * w, g, w)]
    elif kind == "max_pool_mel":
        n_in = g * w
        idx = np.stack([rng.choice(n_in, size=w, replace=False) for _ in range(g)])
        layers = [LayerSpec("max_pool_mel", n_in, g, w, pool_index=idx)]
    else:
        layers = [LayerSpec(kind, g * w, g, w, act, shared)]
    layers.append(LayerSpec("fully_connected", g, 3, activation="sigmoid"))
    layers.append(LayerSpec("fully_connected", 3, 2, activation="softmax"))
    return Network(layers, seed)


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(LAYER_KINDS.index(kind))
    for cfg in range(20):
        net = random_net(kind, rng, cfg)
        x = rng.normal(size=(6, net.in_dim))
        y = one_hot(rng.integers(0, 2, 6))
        assert gradient_check(net, x, y) <= 1e-4


def test_gradient_check_ten_inputs():
    net = build_network("tw_fc", 2, context=5, seed=3)
    assert net.in_dim == 10
    x = np.random.default_rng(0).normal(size=(8, 10))
    assert gradient_check(net, x, one_hot([0, 1] * 4)) <= 1e-4


def test_zero_weights_give_even_posterior():
    net = build_network("fc", 7, seed=0)
    net.weights = [np.zeros_like(w) for w in net.weights]
    net.biases = [np.zeros_like(b) for b in net.biases]
    p = net.forward(np.random.default_rng(1).normal(size=(4, 7)))
    assert np.allclose(p, 0.5)


def test_softmax_output_sums_to_one():
    net = build_network("tw", 5, seed=2)
    p = net.forward(np.random.default_rng(2).normal(scale=30, size=(50, 25)))
    assert np.all((p > 0) & (p < 1))
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_layer_geometry_and_validation():
    assert LayerSpec("partial_freq_weight", 256, 64, 4).out_dim == 64
    with pytest.raises(NetworkError):
        LayerSpec("partial_freq_weight", 256, 60, 4)
    with pytest.raises(NetworkError):
        LayerSpec("convolution", 4, 2)
    with pytest.raises(NetworkError):
        Network([LayerSpec("fully_connected", 4, 3, activation="sigmoid"),
                 LayerSpec("fully_connected", 4, 2, activation="softmax")])
    with pytest.raises(NetworkError):
        Network([LayerSpec("fully_connected", 4, 2, activation="sigmoid")])
    net = build_network("fc", 4)
    with pytest.raises(NetworkError):
        net.forward(np.zeros(5))


def test_uniform_pool_takes_group_max():
    net = Network([LayerSpec("max_pool_uniform", 1024, 256, 4),
                   LayerSpec("fully_connected", 256, 2, activation="softmax")])
    x = np.random.default_rng(0).normal(size=(3, 1024))
    a, _ = net._layer_forward(0, x)
    assert np.array_equal(a, x.reshape(3, 256, 4).max(axis=2))


def test_partial_layer_locality():
    net = build_network("fw", 12, fw_width=4, seed=5)
    x = np.random.default_rng(4).normal(size=(1, 12))
    base, _ = net._layer_forward(0, x)
    y = x.copy()
    y[0, 4:8] = y[0, [5, 4, 7, 6]]
    moved, _ = net._layer_forward(0, y)
    assert np.array_equal(moved[0, [0, 2]], base[0, [0, 2]])
    assert not np.isclose(moved[0, 1], base[0, 1])


def test_param_counts():
    # weights + biases over trainable layers
    assert build_network("fc", 60, hidden=8).param_count == 60 * 8 + 8 + 8 * 2 + 2
    assert build_network("fw", 256, fw_width=4).param_count == 64 * 4 + 64 + 64 * 2 + 2
    assert build_network("tw", 25, context=5).param_count == 25 * 5 + 25 + 25 * 2 + 2
    assert build_network("tw", 25, context=5, shared=True).param_count == 5 + 1 + 25 * 2 + 2
    pooled = Network([LayerSpec("max_pool_uniform", 1024, 256, 4),
                      LayerSpec("fully_connected", 256, 2, activation="softmax")])
    assert pooled.param_count == 256 * 2 + 2


def test_zero_learning_rate_keeps_weights():
    net = build_network("tw_fc", 3, seed=1)
    before = [w.copy() for w in net.weights]
    x = np.random.default_rng(0).normal(size=(10, 15))
    backward_update(net, x, one_hot(np.arange(10) % 2), TrainConfig(learning_rate=0.0))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.weights))


def test_single_step_reduces_loss():
    net = build_network("fc", 6, seed=2)
    x = np.random.default_rng(3).normal(size=(1, 6))
    y = one_hot([1])
    before = net.loss_and_grads(x, y)[0]
    backward_update(net, x, y, TrainConfig(learning_rate=1e-3, momentum=0.0))
    assert net.loss_and_grads(x, y)[0] < before


def test_non_finite_loss_aborts():
    net = build_network("fc", 2, seed=0)
    x = np.array([[np.nan, 0.0]])
    with pytest.raises(TrainingDiverged):
        backward_update(net, x, one_hot([0]), TrainConfig())


def test_training_is_deterministic_and_separates():
    rng = np.random.default_rng(7)
    x = np.r_[rng.normal(-2, 1, (100, 4)), rng.normal(2, 1, (100, 4))]
    labels = np.r_[np.zeros(100, int), np.ones(100, int)]
    nets = []
    for _ in range(2):
        net = build_network("fc", 4, seed=11)
        train(net, x, labels, TrainConfig(epochs=10, seed=3))
        nets.append(net)
    assert all(np.array_equal(a, b) for a, b in zip(nets[0].weights, nets[1].weights))
    p = nets[0].forward(x)[:, 1]
    assert p[labels == 1].min() > p[labels == 0].max()


def test_checkpoint_round_trip(tmp_path):
    net = build_network("tw_fc", 4, seed=9)
    net.fit_normalization(np.random.default_rng(0).normal(3, 2, (30, 20)))
    net.save(tmp_path / "net.json")
    back = Network.load(tmp_path / "net.json")
    x = np.random.default_rng(1).normal(size=(5, 20))
    assert np.array_equal(net.forward(x), back.forward(x))
    bad = net.to_dict()
    bad["format_version"] = 99
    with pytest.raises(NetworkError):
        Network.from_dict(bad)


def test_balance_training_set():
    x = np.arange(1100)[:, None]
    labels = np.r_[np.ones(100, int), np.zeros(1000, int)]
    xb, lb = balance_training_set(x, labels, seed=4)
    assert (lb == 1).sum() == 100 and (lb == 0).sum() == 100
    assert np.array_equal(xb, balance_training_set(x, labels, seed=4)[0])
    x2, l2 = balance_training_set(x[:200], np.r_[np.ones(100, int), np.zeros(100, int)])
    assert np.array_equal(x2, x[:200])
    with pytest.raises(NetworkError):
        balance_training_set(x[:10], np.ones(10, int))


def test_generic_inputs():
    s = np.zeros((1, 1024))
    s[0, 37] = 5.0
    ump = build_generic_input(s, "ump256")
    assert ump.shape == (1, 256) and int(np.argmax(ump)) == 9
    assert build_generic_input(s, "msmp60").shape == (1, N_MEL)
    mono = build_generic_input(np.arange(1024.0)[None], "msmp60")[0]
    assert np.all(np.diff(mono) >= 0)
    assert np.array_equal(build_generic_input(s, "fc_1024"), s)
    with pytest.raises(ValueError):
        build_generic_input(s, "bogus")


def test_mel_supports_cover_spectrum():
    sup = mel_supports()
    assert len(sup) == N_MEL and all(len(s) > 0 for s in sup)
    idx = pad_supports(sup)
    assert idx.shape[0] == N_MEL


def test_class_specific_inputs():
    s = np.random.default_rng(0).normal(size=(3, 1024))
    assert build_class_specific_input(s, [1000.0, 2000.0, 3000.0, 4000.0, 5000.0]).shape == (3, 25)
    assert build_class_specific_input(s, [1000.0]).shape == (3, 5)
    # 1000 and 1001 Hz fall in the same bin
    assert build_class_specific_input(s, [1000.0, 1001.0]).shape == (3, 5)
    with pytest.raises(ValueError):
        build_class_specific_input(s, [13000.0])
    a1 = default_registry()["a1"]
    assert build_class_specific_input(s, a1).shape == (3, 5 * len(a1.specific_frequencies))


def test_stack_context_layout():
    x = np.arange(12.0).reshape(4, 3)
    st = stack_context(x, 3)
    assert st.shape == (4, 9)
    # feature-major: row t holds x[t-1..t+1, f] for each f in turn
    assert st[1].tolist() == [0.0, 3.0, 6.0, 1.0, 4.0, 7.0, 2.0, 5.0, 8.0]
    assert st[0, :3].tolist() == [0.0, 0.0, 3.0]
    with pytest.raises(ValueError):
        stack_context(x, 4)
