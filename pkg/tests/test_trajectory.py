import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebridge.errors import ConfigError, DomainError
from ebridge.numcore import Rng
from ebridge.trajectory import (TrajectoryParams, bridge_point, bridge_velocity, diffuse_state, i2sb_state,
                                i2sb_std, interp_geodesic, mean_path, mean_velocity, start_point)

horizons = st.floats(0.05, 1.0)
fracs = st.floats(0.0, 1.0)


def test_geodesic_endpoints_and_value():
    x0, y = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    np.testing.assert_array_equal(interp_geodesic(x0, y, 0.0, 0.7), x0)
    np.testing.assert_allclose(interp_geodesic(x0, y, 0.7, 0.7), y, atol=1e-15)
    np.testing.assert_array_equal(interp_geodesic(np.array([0.0]), np.array([2.0]), 0.25, 0.5), [1.0])


@given(horizons, fracs)
def test_geodesic_swap_symmetry(T0, u):
    rng = Rng(0)
    x0, y = rng.normal(3), rng.normal(3)
    t = u * T0
    np.testing.assert_allclose(interp_geodesic(x0, y, t, T0), interp_geodesic(y, x0, T0 - t, T0), atol=1e-14)


def test_geodesic_domain():
    with pytest.raises(DomainError):
        interp_geodesic(np.zeros(1), np.ones(1), 0.6, 0.5)
    with pytest.raises(DomainError):
        interp_geodesic(np.zeros(1), np.ones(1), -0.1, 0.5)


def test_diffuse_state_hand_example():
    b = diffuse_state(np.array([1.0]), np.array([3.0]), np.array([-1.0]), 0.5, 1.0)
    np.testing.assert_array_equal(b.x_tilde, [2.0])
    np.testing.assert_array_equal(b.x_t, [0.5])


def test_diffuse_state_limits():
    rng = Rng(1)
    x0, y, xT = rng.normal(4), rng.normal(4), rng.normal(4)
    near0 = diffuse_state(x0, y, xT, 1e-9, 0.6).x_t
    np.testing.assert_allclose(near0, x0, atol=1e-8)
    at_T0 = diffuse_state(x0, y, xT, 0.6, 0.6).x_t
    np.testing.assert_allclose(at_T0, 0.4 * y + 0.6 * xT, atol=1e-15)
    with pytest.raises(DomainError):
        diffuse_state(x0, y, xT, 0.0, 0.6)


def test_bridge_batch_identities_over_many_draws():
    rng = Rng(2)
    n = 10_000
    T0 = np.array([0.2, 0.4, 0.6, 0.8, 1.0])[rng.integers(0, 5, n)]
    t = T0 * (1.0 - rng.uniform(0, 1, n))
    x0, y, xT = (rng.normal((n, 3)) for _ in range(3))
    b = diffuse_state(x0, y, xT, t, T0)
    tau = (t / T0)[:, None]
    np.testing.assert_allclose(b.x_tilde, (1 - tau) * x0 + tau * y, rtol=0, atol=1e-14)
    np.testing.assert_allclose(b.x_t, (1 - t[:, None]) * b.x_tilde + t[:, None] * xT, rtol=0, atol=1e-14)
    assert np.all(b.t > 0) and np.all(b.t <= b.T0)


def test_start_point():
    y = np.array([2.0])
    start, xT = start_point(y, 0.5, Rng(0), xT=np.array([0.0]))
    np.testing.assert_array_equal(start, [1.0])
    start, xT = start_point(np.ones(3), 1.0, Rng(4))
    np.testing.assert_array_equal(start, xT)
    start, _ = start_point(np.ones(3), 1e-12, Rng(4))
    np.testing.assert_allclose(start, 1.0, atol=1e-11)
    with pytest.raises(DomainError):
        start_point(y, 1.5, Rng(0))


def test_ou_mean_value():
    p = TrajectoryParams("OUMeanPath", theta=1.0)
    np.testing.assert_allclose(mean_path(p, np.array([1.0]), np.array([0.0]), 1.0), [math.exp(-1)], rtol=1e-15)
    np.testing.assert_allclose(mean_path(p, np.array([1.0]), np.array([0.3]), 60.0), [0.3], atol=1e-15)


@given(fracs)
def test_ebridge_and_i2sb_means_coincide_at_unit_horizon(t):
    x0, y = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    a = mean_path(TrajectoryParams("EBridge", T0=1.0), x0, y, t)
    b = mean_path(TrajectoryParams("I2SBBridge"), x0, y, t)
    np.testing.assert_allclose(a, b, atol=1e-15)


@pytest.mark.parametrize("kind", ["EBridge", "StandardDiffusion", "I2SBBridge", "OUMeanPath"])
def test_every_mean_starts_at_x0(kind):
    x0, y = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    np.testing.assert_array_equal(mean_path(TrajectoryParams(kind, T0=0.6), x0, y, 0.0), x0)


def test_ebridge_mean_has_zero_second_difference():
    p = TrajectoryParams("EBridge", T0=0.8)
    x0, y = np.array([0.3, -1.0]), np.array([2.0, 0.7])
    mu = np.stack([mean_path(p, x0, y, t) for t in np.linspace(0, 0.8, 101)])
    assert np.max(np.linalg.norm(mu[2:] - 2 * mu[1:-1] + mu[:-2], axis=1)) <= 1e-12
    np.testing.assert_allclose(mean_path(p, x0, y, 0.8), y, atol=1e-15)


@given(st.sampled_from(["EBridge", "StandardDiffusion", "I2SBBridge", "OUMeanPath"]), st.floats(0.05, 0.95))
def test_mean_velocity_matches_finite_difference(kind, u):
    p = TrajectoryParams(kind, T0=0.9, theta=1.3)
    x0, y = np.array([0.3, -1.0]), np.array([2.0, 0.7])
    t, h = u * 0.9, 1e-6
    fd = (mean_path(p, x0, y, t + h) - mean_path(p, x0, y, t - h)) / (2 * h)
    np.testing.assert_allclose(mean_velocity(p, x0, y, t), fd, atol=1e-8)


def test_params_validation():
    with pytest.raises(ConfigError):
        TrajectoryParams("Nope")
    with pytest.raises(ConfigError):
        TrajectoryParams(T0=0.0)
    with pytest.raises(ConfigError):
        TrajectoryParams("I2SBBridge", sigma=-1.0)
    with pytest.raises(ConfigError):
        TrajectoryParams("OUMeanPath", theta=0.0)


def test_i2sb_noise_profile():
    assert i2sb_std(0.5, 2.0) == pytest.approx(1.0)
    x0, y = np.ones((5, 2)), -np.ones((5, 2))
    np.testing.assert_array_equal(i2sb_state(x0, y, 0.0, 3.0, Rng(0)), x0)
    np.testing.assert_array_equal(i2sb_state(x0, y, 1.0, 3.0, Rng(0)), y)


def test_i2sb_monte_carlo_mean():
    n, t, sigma = 100_000, 0.3, 1.5
    x0, y = np.full((n, 1), 2.0), np.full((n, 1), -1.0)
    draws = i2sb_state(x0, y, t, sigma, Rng(7))[:, 0]
    se = sigma * math.sqrt(t * (1 - t)) / math.sqrt(n)
    assert abs(draws.mean() - (0.7 * 2.0 + 0.3 * -1.0)) < 3 * se


def test_bridge_velocity_examples():
    v = bridge_velocity(np.array([0.0]), np.array([2.0]), np.array([1.0]), 0.5, 1.0)
    np.testing.assert_allclose(v, [2.0], atol=1e-15)
    y = np.array([0.4, -0.2])
    for t in (0.0, 0.3, 0.6):
        np.testing.assert_allclose(bridge_velocity(y, np.zeros(2), y, t, 0.6), 0.0, atol=1e-15)


@given(horizons, st.floats(0.01, 0.99), st.integers(0, 1000))
def test_bridge_velocity_is_path_derivative(T0, u, seed):
    rng = Rng(seed)
    x0, y, xT = rng.normal(3), rng.normal(3), rng.normal(3)
    t, h = u * T0, 1e-6 * T0
    fd = (bridge_point(x0, y, xT, t + h, T0) - bridge_point(x0, y, xT, t - h, T0)) / (2 * h)
    np.testing.assert_allclose(bridge_velocity(x0, xT - x0, y, t, T0), fd, atol=1e-6)
