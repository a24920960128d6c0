import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebridge.errors import ConfigError, InputError, TrainingError
from ebridge.numcore import (Denoiser, Rng, adam_init, adam_step, dumps_json, init_target_variance,
                             load_checkpoint, mlp_backward, mlp_forward, mlp_init, save_checkpoint,
                             time_embedding)


def fd_grads(net, x, t, cond, cot, h=1e-5):
    params = net.params()
    out = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for s in (1.0, -1.0):
                q = [a.copy() for a in params]
                q[i][idx] += s * h
                vals.append(float(np.sum(mlp_forward(net.with_params(q), x, t, cond) * cot)))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    return out


def test_zero_input_no_hidden_layer_gives_zero():
    net = mlp_init([2, 2], 0, seed=3)
    np.testing.assert_array_equal(mlp_forward(net, np.zeros(2), 0.5, np.zeros(0)), np.zeros(2))


def test_init_is_deterministic():
    a, b = mlp_init([6, 16, 2], 2, 11), mlp_init([6, 16, 2], 2, 11)
    for p, q in zip(a.params(), b.params()):
        assert p.tobytes() == q.tobytes()
    for p, q in zip(a.params(), a.target_params()):
        np.testing.assert_array_equal(p, q)


def test_init_variance_matches_fan_in_rule():
    net = mlp_init([3, 64, 3], 0, 7)
    for w in net.weights:
        target = init_target_variance(w.shape[1])
        assert abs(w.var() / target - 1.0) < 0.3
    assert all(np.all(b == 0) for b in net.biases)


def test_zero_parameters_give_zero_output():
    net = mlp_init([6, 5, 2], 2, 0)
    net = net.with_params([np.zeros_like(p) for p in net.params()])
    x = Rng(1).normal((4, 2))
    np.testing.assert_array_equal(mlp_forward(net, x, 0.3, x), 0.0)


def test_forward_is_pure():
    net = mlp_init([8, 5, 2], 4, 0)
    x, c = Rng(2).normal((3, 2)), Rng(3).normal((3, 2))
    assert mlp_forward(net, x, 0.4, c).tobytes() == mlp_forward(net, x, 0.4, c).tobytes()


def test_single_layer_hand_evaluation():
    # input is [x, sin(pi t), cos(pi t), cond]
    W = np.arange(12, dtype=float).reshape(2, 6) / 10.0
    b = np.array([0.5, -0.5])
    net = Denoiser((6, 2), 2, (W,), (b,))
    x, cond, t = np.array([1.0, 2.0]), np.array([-1.0, 3.0]), 0.25
    h = np.array([1.0, 2.0, math.sin(math.pi * t), math.cos(math.pi * t), -1.0, 3.0])
    np.testing.assert_allclose(mlp_forward(net, x, t, cond), W @ h + b, rtol=0, atol=1e-15)


def test_identity_net_passes_state_through():
    net = Denoiser((2, 2), 0, (np.eye(2),), (np.zeros(2),))
    np.testing.assert_array_equal(mlp_forward(net, np.array([1.0, 2.0]), 0.0, np.zeros(0)), [1.0, 2.0])


def test_time_embedding_frequencies():
    t = np.array([[0.1], [0.7]])
    emb = time_embedding(t, 6)
    for j in range(6):
        k = j // 2
        ref = np.sin(2**k * np.pi * t[:, 0]) if j % 2 == 0 else np.cos(2**k * np.pi * t[:, 0])
        np.testing.assert_allclose(emb[:, j], ref, atol=1e-15)


def test_backward_matches_finite_differences_small_net():
    net = mlp_init([2, 8, 2], 0, 5)
    rng = Rng(9)
    x, cot = rng.normal((3, 2)), rng.normal((3, 2))
    g = mlp_backward(net, x, 0.3, None, cot)
    for a, b in zip(g, fd_grads(net, x, 0.3, None, cot)):
        np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-9)


def test_backward_matches_finite_differences_three_layer_conditioned():
    net = mlp_init([2 + 4 + 2, 6, 5, 2], 4, 1)
    rng = Rng(10)
    x, c, cot = rng.normal((4, 2)), rng.normal((4, 2)), rng.normal((4, 2))
    t = rng.uniform(0, 1, 4)
    g = mlp_backward(net, x, t, c, cot)
    for a, b in zip(g, fd_grads(net, x, t, c, cot)):
        np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-9)


def test_zero_cotangent_gives_zero_gradient():
    net = mlp_init([6, 8, 2], 2, 0)
    x = Rng(0).normal((5, 2))
    for g in mlp_backward(net, x, 0.5, x, np.zeros((5, 2))):
        assert not np.any(g)


@given(st.floats(-10, 10, allow_nan=False))
def test_gradient_is_linear_in_cotangent(scale):
    net = mlp_init([6, 8, 2], 2, 0)
    rng = Rng(4)
    x, cot = rng.normal((5, 2)), rng.normal((5, 2))
    base = mlp_backward(net, x, 0.2, x, cot)
    scaled = mlp_backward(net, x, 0.2, x, scale * cot)
    for a, b in zip(base, scaled):
        np.testing.assert_allclose(b, scale * a, rtol=1e-12, atol=1e-12)


def test_shape_errors():
    net = mlp_init([6, 8, 2], 2, 0)
    with pytest.raises(InputError):
        mlp_forward(net, np.zeros(3), 0.1, np.zeros(2))
    with pytest.raises(InputError):
        mlp_forward(net, np.zeros(2), 0.1, np.zeros(3))
    with pytest.raises(InputError):
        mlp_backward(net, np.zeros((2, 2)), 0.1, np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(InputError):
        mlp_forward(net, np.zeros(2), 1.5, np.zeros(2))


def test_bad_layer_dims():
    with pytest.raises(ConfigError):
        mlp_init([4], 0, 0)
    with pytest.raises(ConfigError):
        mlp_init([3, 0, 2], 0, 0)
    with pytest.raises(ConfigError):
        mlp_init([3, 4, 2], 2, 0)  # 3 inputs cannot hold 2 state + 2 time features


@given(st.integers(0, 2**32 - 1))
def test_params_bounded_by_1e3_stay_finite(seed):
    rng = Rng(seed)
    net = mlp_init([6, 8, 8, 2], 2, 0)
    net = net.with_params([rng.uniform(-1e3, 1e3, p.shape) for p in net.params()])
    x = rng.normal((4, 2))
    assert np.all(np.isfinite(mlp_forward(net, x, 0.5, x)))
    assert all(np.all(np.isfinite(g)) for g in mlp_backward(net, x, 0.5, x, np.ones((4, 2))))


def test_adam_zero_gradient_is_fixed_point():
    p = [np.array([1.0, -2.0])]
    opt = adam_init(p, 0.1)
    q, opt2 = adam_step(p, [np.zeros(2)], opt)
    np.testing.assert_array_equal(q[0], p[0])
    assert opt2.step == 1


def test_adam_first_step_hand_value():
    q, _ = adam_step([np.array([0.0])], [np.array([1.0])], adam_init([np.zeros(1)], 0.1))
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert q[0][0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_is_deterministic():
    rng = Rng(0)
    p, g = [rng.normal(3)], [rng.normal(3)]
    a = adam_step(p, g, adam_init(p))[0][0]
    b = adam_step(p, g, adam_init(p))[0][0]
    assert a.tobytes() == b.tobytes()


def test_adam_rejects_non_finite_gradient():
    p = [np.zeros(2), np.zeros(3)]
    with pytest.raises(TrainingError, match="parameter 1"):
        adam_step(p, [np.zeros(2), np.array([0.0, np.nan, 0.0])], adam_init(p))


def test_rng_streams():
    assert Rng(5).normal(4).tobytes() == Rng(5).normal(4).tobytes()
    assert not np.array_equal(Rng(5, (1,)).normal(4), Rng(5, (2,)).normal(4))


def test_checkpoint_round_trip_is_exact(tmp_path):
    net = mlp_init([6, 8, 2], 2, 3)
    path = tmp_path / "ck.json"
    save_checkpoint(path, net, ema_decay=0.5, trained_steps=7, seed=3)
    back, doc = load_checkpoint(path)
    for p, q in zip(net.params(), back.params()):
        assert p.tobytes() == q.tobytes()
    assert doc["format"] == "EBRG" and doc["version"] == 1 and doc["trained_steps"] == 7
    assert [f for f in os.listdir(tmp_path)] == ["ck.json"]


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "EBRG",\n "version": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_checkpoint(path)
    net = mlp_init([6, 8, 2], 2, 3)
    save_checkpoint(path, net)
    doc = json.loads(path.read_text())
    doc["weights"][0] = doc["weights"][0][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_checkpoint(path)
    doc["format"] = "OTHER"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_json_floats_round_trip():
    vals = [0.1, 1 / 3, 1e-300, -2.5e17, math.pi]
    assert json.loads(dumps_json(vals)) == vals
