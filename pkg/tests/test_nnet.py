import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metadr import nnet
from oracles import central_difference_grad, max_relative_error, random_small_mlp
from metadr.nnet import Mlp, TrainConfig, backprop_grad, forward, init_mlp, mse, train


def test_init_shapes_and_determinism():
    a = init_mlp([3, 5, 2], ["tanh", "identity"], seed=7)
    b = init_mlp([3, 5, 2], ["tanh", "identity"], seed=7)
    assert [w.shape for w in a.weights] == [(5, 3), (2, 5)]
    assert [bb.shape for bb in a.biases] == [(5,), (2,)]
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert not np.array_equal(a.weights[0], init_mlp([3, 5, 2], ["tanh", "identity"], seed=8).weights[0])
    assert all(np.all(bias == 0) for bias in a.biases)


def test_glorot_bound():
    net = init_mlp([200, 50], ["tanh"], seed=0)
    bound = math.sqrt(6 / 250)
    assert bound == pytest.approx(0.1549, abs=1e-4)
    assert np.abs(net.weights[0]).max() <= bound
    assert np.abs(net.weights[0]).max() > 0.9 * bound


def test_mismatched_config_rejected():
    with pytest.raises(ValueError):
        init_mlp([3, 4], ["tanh", "tanh"], seed=0)
    with pytest.raises(ValueError):
        init_mlp([3, 4], ["relu"], seed=0)
    with pytest.raises(ValueError):
        init_mlp([3], [], seed=0)


def test_forward_hand_values():
    net = Mlp([1, 1], [np.array([[2.0]])], [np.array([1.0])], ["tanh"])
    assert net(np.array([0.5]))[0] == pytest.approx(0.96403, abs=1e-5)
    zero = Mlp([3, 2], [np.zeros((2, 3))], [np.zeros(2)], ["identity"])
    assert np.all(zero(np.ones(3)) == 0)
    ident = Mlp([3, 3], [np.eye(3)], [np.zeros(3)], ["identity"])
    assert np.array_equal(ident(np.array([1.0, -2.0, 3.5])), [1.0, -2.0, 3.5])
    net = Mlp([1, 1], [np.array([[2.0]])], [np.array([-1.0])], ["logistic"])
    assert net(np.array([0.5]))[0] == 0.5
    out, cache = forward(net, np.zeros((4, 1)))
    assert out.shape == (4, 1) and len(cache.pre) == 1


def test_forward_wrong_width():
    net = init_mlp([3, 2], ["identity"], 0)
    with pytest.raises(ValueError):
        net(np.zeros(4))


def test_mse_definition():
    # squared norm per instance, averaged over instances (not over components)
    assert mse(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])) == 5.0
    assert mse(np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros((2, 2))) == 0.5
    assert mse(np.array([3.0]), np.array([1.0])) == 4.0
    assert mse(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])) == 1.0
    two = np.array([[0.5**0.5, 0.0], [1.5**0.5, 0.0]])
    assert mse(two, np.zeros((2, 2))) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        mse(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        mse(np.zeros((0, 3)), np.zeros((0, 3)))


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 6),
    st.integers(1, 6),
    st.floats(-10, 10, allow_nan=False),
    st.integers(0, 2**31 - 1),
)
def test_mse_scaling_law(n, d, a, seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    assert mse(a * p, a * t) == pytest.approx(a * a * mse(p, t), rel=1e-12, abs=1e-300)
    assert mse(p, t) >= 0 and mse(p, p) == 0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(50):
        net = random_small_mlp(rng, init_mlp, nnet.ACTIVATIONS)
        x = rng.normal(size=(5, net.n_in))
        y = rng.normal(size=(5, net.n_out))
        worst = max(worst, max_relative_error(backprop_grad(net, x, y).flat(), central_difference_grad(net, x, y)))
    assert worst < 1e-6


def test_gradient_zero_at_exact_fit():
    net = init_mlp([3, 4, 2], ["tanh", "identity"], 0)
    x = np.random.default_rng(0).normal(size=(6, 3))
    g = backprop_grad(net, x, net(x))
    assert np.all(g.flat() == 0)


def test_linear_gradient_closed_form():
    rng = np.random.default_rng(5)
    w, b = rng.normal(size=(2, 3)), rng.normal(size=2)
    net = Mlp([3, 2], [w], [b], ["identity"])
    x, y = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    r = x @ w.T + b - y
    g = backprop_grad(net, x, y)
    np.testing.assert_allclose(g.weights[0], 2 / 7 * r.T @ x, rtol=1e-12)
    np.testing.assert_allclose(g.biases[0], 2 / 7 * r.sum(axis=0), rtol=1e-12)


def test_training_fits_one_dimensional_affine():
    x = np.linspace(-1, 1, 64)[:, None]
    y = 2 * x + 1
    net = init_mlp([1, 1], ["identity"], 0)
    _, rep = train(net, (x, y), (x, y), TrainConfig(max_epochs=2000, learning_rate=1e-2))
    assert rep.final_val_mse < 1e-8


def test_best_not_worse_than_initial():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, size=(64, 2))
    y = np.sin(x[:, :1]) * x[:, 1:]
    net = init_mlp([2, 6, 1], ["tanh", "identity"], 0)
    _, rep = train(net, (x, y), (x, y), TrainConfig(max_epochs=100, early_stop_patience=1000))
    assert rep.final_val_mse <= mse(net(x), y)


def test_training_fits_affine_map():
    rng = np.random.default_rng(0)
    a, c = rng.normal(size=(2, 3)), rng.normal(size=2)
    x = rng.uniform(-1, 1, size=(200, 3))
    y = x @ a.T + c
    net = init_mlp([3, 2], ["identity"], 1)
    fitted, rep = train(net, (x, y), (x[:50], y[:50]), TrainConfig(learning_rate=1e-2, max_epochs=600))
    assert rep.final_val_mse < 1e-8
    np.testing.assert_allclose(fitted.weights[0], a, atol=1e-4)


def test_training_deterministic_and_zero_epochs():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(40, 2)), rng.normal(size=(40, 1))
    net = init_mlp([2, 4, 1], ["tanh", "identity"], 3)
    cfg = TrainConfig(max_epochs=5, batch_size=8)
    a, ra = train(net, (x, y), (x, y), cfg)
    b, rb = train(net, (x, y), (x, y), cfg)
    assert ra.train_loss == rb.train_loss
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))
    same, rep = train(net, (x, y), (x, y), TrainConfig(max_epochs=0))
    assert rep.epochs_run == 0 and rep.best_epoch == 0
    assert all(np.array_equal(u, v) for u, v in zip(same.weights, net.weights))


def test_best_validation_parameters_returned():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(30, 2)), rng.normal(size=(30, 1))
    net = init_mlp([2, 8, 1], ["tanh", "identity"], 0)
    best, rep = train(net, (x, y), (x[:10], y[:10] + 1), TrainConfig(max_epochs=50, batch_size=5))
    assert rep.final_val_mse == min([mse(net(x[:10]), y[:10] + 1)] + rep.val_loss)
    assert mse(best(x[:10]), y[:10] + 1) == pytest.approx(rep.final_val_mse, rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    x = np.linspace(-1, 1, 20)[:, None]
    net = init_mlp([1, 1], ["identity"], 0)
    with pytest.raises(nnet.TrainingDiverged):
        train(net, (x, 1e200 * x), (x, x), TrainConfig(optimizer="sgd", learning_rate=1.0, max_epochs=50, batch_size=4))


def test_bad_config():
    x = np.zeros((4, 1))
    net = init_mlp([1, 1], ["identity"], 0)
    with pytest.raises(ValueError):
        train(net, (x, x), (x, x), TrainConfig(batch_size=10))
    with pytest.raises(ValueError):
        train(net, (x, x), (x, x), TrainConfig(learning_rate=-1))


def test_serialization_round_trip(tmp_path):
    net = init_mlp([4, 3, 2], ["tanh", "logistic"], 9)
    net.biases[0][:] = [0.1, -1 / 3, 1e-17]
    nnet.save_mlp(net, tmp_path / "m.json")
    back = nnet.load_mlp(tmp_path / "m.json")
    assert back.layer_sizes == net.layer_sizes and back.activations == net.activations
    for u, v in zip(net.weights + net.biases, back.weights + back.biases):
        assert np.array_equal(u, v)
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(net(x), back(x))


def test_load_rejects_bad_version():
    doc = nnet.to_dict(init_mlp([1, 1], ["identity"], 0))
    doc["format_version"] = 99
    with pytest.raises(ValueError):
        nnet.from_dict(doc)


def test_sub_and_stack():
    net = init_mlp([3, 4, 2, 5], ["tanh", "identity", "logistic"], 0)
    x = np.ones(3)
    glued = nnet.stack(net.sub(0, 2), net.sub(2, 3))
    np.testing.assert_array_equal(glued(x), net(x))
