import numpy as np
import pytest

from proedge.errors import CheckpointError, NumericError, ShapeError, UsageError
from proedge.nn import (LayerSpec, Network, adam_step, dense, gradient_check, lstm_step, mlp)


def conv_lstm_net(seed=0):
    specs = [LayerSpec("conv1d", {"in_channels": 3, "out_channels": 4, "kernel": 3}),
             LayerSpec("activation", {}, "relu"),
             LayerSpec("lstm", {"in": 4, "hidden": 5}),
             LayerSpec("dense", {"in": 5, "out": 2})]
    return Network((8, 3), specs, seed=seed)


def test_dense_identity_weights():
    net = Network((3,), dense(3, 3))
    net.set_params(np.concatenate([np.eye(3).ravel(), np.zeros(3)]))
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(net.predict(x), x)


def test_conv_center_tap_kernel_copies_interior():
    net = Network((6, 1), [LayerSpec("conv1d", {"in_channels": 1, "out_channels": 1, "kernel": 3})])
    net.set_params([0.0, 1.0, 0.0, 0.0])
    x = np.arange(6.0).reshape(1, 6, 1)
    np.testing.assert_array_equal(net.predict(x)[0, :, 0], x[0, 1:5, 0])


def test_conv_output_length_valid_padding():
    net = Network((32, 5), [LayerSpec("conv1d", {"in_channels": 5, "out_channels": 16, "kernel": 5})])
    assert net.output_shape == (28, 16)
    with pytest.raises(ShapeError):
        Network((4, 5), [LayerSpec("conv1d", {"in_channels": 5, "out_channels": 2, "kernel": 5})])


def test_lstm_forget_one_keeps_cell_state():
    H, n = 3, 2
    Wx = np.zeros((n, 4 * H))
    Wh = np.zeros((H, 4 * H))
    b = np.zeros(4 * H)
    b[:H] = -1e3       # input gate closed
    b[H:2 * H] = 1e3   # forget gate open
    c0 = np.array([[0.3, -0.7, 1.2]])
    h, c = lstm_step(np.ones((1, n)), np.zeros((1, H)), c0, Wx, Wh, b)
    np.testing.assert_allclose(c, c0, atol=1e-12)


def test_forget_gate_bias_initialised_to_one():
    net = Network((4, 2), [LayerSpec("lstm", {"in": 2, "hidden": 3})], seed=1)
    b = net.params[-12:]
    np.testing.assert_array_equal(b[3:6], 1.0)
    assert np.all(b[:3] == 0) and np.all(b[6:] == 0)


def test_zero_output_grad_gives_zero_param_grad():
    net = conv_lstm_net()
    x = np.random.default_rng(0).normal(size=(3, 8, 3))
    _, cache = net.forward(x)
    assert np.all(net.backward(cache, np.zeros((3, 2))) == 0)


def test_backward_linear_in_output_grad():
    net = conv_lstm_net()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 8, 3))
    _, cache = net.forward(x)
    g1, g2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    lhs = net.backward(cache, 2.0 * g1 + 3.0 * g2)
    rhs = 2.0 * net.backward(cache, g1) + 3.0 * net.backward(cache, g2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("specs,shape", [
    (dense(4, 3, "tanh"), (4,)),
    (dense(4, 3, "sigmoid"), (4,)),
    (mlp(5, (7, 6), 3), (5,)),
    ([LayerSpec("conv1d", {"in_channels": 2, "out_channels": 3, "kernel": 2})], (5, 2)),
    ([LayerSpec("lstm", {"in": 2, "hidden": 3})], (4, 2)),
])
def test_gradient_check_per_layer(specs, shape):
    net = Network(shape, specs, seed=3)
    x = np.random.default_rng(4).normal(size=(3,) + shape)
    rep = gradient_check(net, x)
    assert rep.passed, rep.max_rel_error


def test_gradient_check_full_forecaster_stack():
    net = conv_lstm_net(seed=5)
    x = np.random.default_rng(6).normal(size=(2, 8, 3))
    rep = gradient_check(net, x)
    assert rep.max_rel_error < 1e-4


def test_gradient_check_detects_broken_backward(monkeypatch):
    net = Network((4,), dense(4, 2), seed=0)
    layer = net.layers[0]
    orig = layer.backward

    def wrong(flat, x, dy):
        dx, (dW, db) = orig(flat, x, dy)
        return dx, [dW * 1.1, db]

    monkeypatch.setattr(layer, "backward", wrong)
    rep = gradient_check(net, np.random.default_rng(0).normal(size=(2, 4)))
    assert not rep.passed


def test_gradient_check_refuses_large_networks():
    with pytest.raises(UsageError):
        gradient_check(Network((200,), dense(200, 60)), np.zeros((1, 200)))


def test_adam_first_step_closed_form():
    net = Network((2,), dense(2, 1))
    p0 = net.params.copy()
    g = np.array([0.5, -2.0, 0.0])
    adam_step(net, g, lr=0.01)
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(net.params, p0 - 0.01 * g / (np.abs(g) + 1e-8))


def test_adam_rejects_bad_gradients():
    net = Network((2,), dense(2, 1))
    with pytest.raises(ShapeError):
        adam_step(net, np.zeros(2))
    with pytest.raises(NumericError):
        adam_step(net, np.array([np.nan, 0, 0]))


def test_forward_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        Network((3,), dense(3, 1)).forward(np.zeros((2, 4)))


def test_stale_and_foreign_cache_rejected():
    net = Network((3,), dense(3, 2))
    other = Network((3,), dense(3, 2))
    _, cache = net.forward(np.ones((1, 3)))
    with pytest.raises(UsageError):
        other.backward(cache, np.ones((1, 2)))
    adam_step(net, np.ones(net.n_params))
    with pytest.raises(UsageError):
        net.backward(cache, np.ones((1, 2)))


def test_checkpoint_round_trip_exact(tmp_path):
    net = conv_lstm_net(seed=9)
    path = tmp_path / "net.json"
    net.save(path)
    back = Network.load(path, expect=conv_lstm_net())
    assert back.params.tobytes() == net.params.tobytes()
    x = np.random.default_rng(0).normal(size=(2, 8, 3))
    assert back.predict(x).tobytes() == net.predict(x).tobytes()


def test_checkpoint_architecture_mismatch():
    d = Network((3,), dense(3, 2)).to_dict()
    with pytest.raises(CheckpointError):
        Network.from_dict(d, expect=Network((3,), dense(3, 4)))
    d["params"] = d["params"][:-1]
    with pytest.raises(CheckpointError):
        Network.from_dict(d)
    with pytest.raises(CheckpointError):
        Network.from_dict({"format": "other"})


def test_same_seed_same_init():
    assert conv_lstm_net(4).params.tobytes() == conv_lstm_net(4).params.tobytes()
    assert conv_lstm_net(4).params.tobytes() != conv_lstm_net(5).params.tobytes()
