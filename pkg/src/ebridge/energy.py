"""Quadrature of path energies and numerical checks of the bridge's
optimality properties.

Velocities of sampled mean paths come from second-order finite differences
on the grid (``np.gradient`` with second-order edges) and integrals from the
composite trapezoid rule, so every quadrature here is O(1/n^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigError, DomainError, NumericError
from .numcore import Rng
from .trajectory import TrajectoryParams, bridge_velocity, interp_geodesic, mean_path, mean_velocity

DEFAULT_N = 2048
BUDGET_N = 65537
JENSEN_SLACK = 1e-9

PathFn = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class EnergyReport:
    kinetic_energy: float
    control_energy: float
    jensen_lower_bound: float
    jensen_gap: float
    n_quadrature: int
    closed_form_reference: float | None = None
    passed: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_quadrature < 2:
            raise ConfigError("n_quadrature must be >= 2")

    def as_dict(self) -> dict:
        return {
            "kinetic_energy": self.kinetic_energy,
            "control_energy": self.control_energy,
            "jensen_lower_bound": self.jensen_lower_bound,
            "jensen_gap": self.jensen_gap,
            "closed_form_reference": self.closed_form_reference,
            "n_quadrature": self.n_quadrature,
            "passed": dict(self.passed),
        }


@dataclass(frozen=True, eq=False)
class AdaptationEnergyGrid:
    t: float
    C1: float
    d: int
    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray  # values[i, j] = J_t(alphas[i], betas[j])

    @property
    def argmin(self) -> tuple[float, float]:
        i, j = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
        return float(self.alphas[i]), float(self.betas[j])

    @property
    def min_value(self) -> float:
        return float(self.values.min())


def _sample(fn: PathFn, grid: np.ndarray) -> np.ndarray:
    vals = np.stack([np.atleast_1d(np.asarray(fn(float(s)), dtype=np.float64)) for s in grid])
    if not np.all(np.isfinite(vals)):
        raise NumericError("path returned non-finite values")
    return vals.reshape(len(grid), -1)


def _velocity(vals: np.ndarray, spacing) -> np.ndarray:
    return np.gradient(vals, spacing, axis=0, edge_order=2)


def _grid(t_start: float, t_end: float, n: int) -> np.ndarray:
    if not t_end > t_start:
        raise ConfigError("t_end must exceed t_start")
    if n < 3:
        # second-order edge differences need three points
        raise ConfigError("quadrature needs n >= 3")
    return np.linspace(t_start, t_end, n)


def kinetic_energy(mean_path_fn: PathFn, t_start: float, t_end: float, n: int = DEFAULT_N) -> float:
    """Trapezoid quadrature of ``1/2 |mu'(t)|^2`` on ``n`` uniform points."""
    grid = _grid(t_start, t_end, n)
    dt = (t_end - t_start) / (n - 1)
    v = _velocity(_sample(mean_path_fn, grid), dt)
    return float(trapezoid(0.5 * np.sum(v * v, axis=1), dx=dt))


def control_energy(mean_path_fn: PathFn, drift_fn: Callable[[float], np.ndarray], t_grid) -> float:
    """Trapezoid quadrature of ``1/2 |mu'(t) - b(t)|^2`` on an increasing grid."""
    grid = np.asarray(t_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise ConfigError("t_grid must be strictly increasing with at least 3 points")
    mu_dot = _velocity(_sample(mean_path_fn, grid), grid)
    drift = _sample(drift_fn, grid)
    r = mu_dot - drift
    return float(trapezoid(0.5 * np.sum(r * r, axis=1), grid))


def jensen_check(mean_path_fn: PathFn, t_start: float, t_end: float, n: int = DEFAULT_N):
    """Return ``(energy, lower_bound, gap)``.

    The bound ``|mu(t_end) - mu(t_start)|^2 / (2 (t_end - t_start))`` is the
    energy of the constant-velocity path with the same displacement.
    """
    energy = kinetic_energy(mean_path_fn, t_start, t_end, n)
    disp = _sample(mean_path_fn, np.array([t_start, t_end]))
    dmu = disp[1] - disp[0]
    bound = float(dmu @ dmu / (2.0 * (t_end - t_start)))
    return energy, bound, energy - bound


def path_fn(params: TrajectoryParams, x0, y) -> PathFn:
    return lambda t: mean_path(params, x0, y, t)


def drift_fn(params: TrajectoryParams, x0, y) -> PathFn:
    return lambda t: mean_velocity(params, x0, y, t)


def horizon(params: TrajectoryParams) -> float:
    return params.T0 if params.kind == "EBridge" else 1.0


def closed_form_kinetic(params: TrajectoryParams, x0, y, t_end: float | None = None) -> float:
    """Exact ``1/2 int |mu'|^2`` over ``[0, t_end]`` (default: the family horizon)."""
    x0 = np.asarray(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    T = horizon(params) if t_end is None else t_end
    gap = float(np.sum((y - x0) ** 2))
    if params.kind == "EBridge":
        return gap * T / (2.0 * params.T0**2)
    if params.kind == "StandardDiffusion":
        return float(np.sum(x0 * x0)) * T / 2.0
    if params.kind == "I2SBBridge":
        return gap * T / 2.0
    th = params.theta
    return th * gap * (1.0 - math.exp(-2.0 * th * T)) / 4.0


def energy_report(params: TrajectoryParams, x0, y, n: int = DEFAULT_N, drift=None,
                  tol: float = 1e-6) -> EnergyReport:
    """Kinetic and control energy of a family's mean path over its horizon.

    ``drift`` defaults to the family's own analytic mean velocity.
    """
    T = horizon(params)
    mu = path_fn(params, x0, y)
    energy, bound, gap = jensen_check(mu, 0.0, T, n)
    ctrl = control_energy(mu, drift or drift_fn(params, x0, y), np.linspace(0.0, T, n))
    ref = closed_form_kinetic(params, x0, y)
    passed = {
        "jensen_gap_nonnegative": gap >= -JENSEN_SLACK,
        "closed_form": abs(energy - ref) <= tol * max(1.0, abs(ref)),
    }
    return EnergyReport(energy, ctrl, bound, gap, n, ref, passed)


def adaptation_energy(alpha, beta, t: float, C1: float, d: int):
    """``J_t = C1 (alpha - (1 - t))^2 + d (beta - t)^2``."""
    return C1 * (np.asarray(alpha) - (1.0 - t)) ** 2 + d * (np.asarray(beta) - t) ** 2


def adaptation_energy_landscape(t: float, C1: float, d: int, grid_spec=(0.0, 1.0, 0.01)) -> AdaptationEnergyGrid:
    """Evaluate ``J_t`` on the square grid ``grid_spec = (low, high, step)`` for both axes."""
    if C1 <= 0 or d < 1:
        raise ConfigError("need C1 > 0 and d >= 1")
    lo, hi, step = grid_spec
    if not hi > lo or step <= 0:
        raise ConfigError("grid_spec must be (low, high, step) with high > low, step > 0")
    axis = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    values = adaptation_energy(axis[:, None], axis[None, :], t, C1, d)
    return AdaptationEnergyGrid(t, C1, d, axis, axis.copy(), values)


def adaptation_energy_mc(alpha: float, beta: float, t: float, C1: float, d: int,
                         n_draws: int = 100_000, seed: int = 0) -> float:
    """Monte-Carlo ``E|X_t - Z_t|^2`` with a fixed signal of energy ``C1`` and ``X_T ~ N(0, I_d)``.

    ``X_t = alpha s + beta X_T`` and ``Z_t = (1 - t) s + t X_T``.
    """
    rng = Rng(seed, (11,))
    s = np.full(d, math.sqrt(C1 / d))
    xT = rng.normal((n_draws, d))
    delta = (alpha - (1.0 - t)) * s[None, :] + (beta - t) * xT
    return float(np.mean(np.sum(delta * delta, axis=1)))


def integrate_feedback(delta0, alpha_gain: float, t_end: float, n_steps: int):
    """Classical RK4 on ``delta' = -alpha delta``. Returns ``(times, states)``."""
    if alpha_gain <= 0:
        raise ConfigError("alpha_gain must be > 0")
    if n_steps < 10:
        raise ConfigError("n_steps must be >= 10")
    delta = np.atleast_1d(np.asarray(delta0, dtype=np.float64)).copy()
    h = t_end / n_steps
    times = np.linspace(0.0, t_end, n_steps + 1)
    states = np.empty((n_steps + 1, delta.size))
    states[0] = delta

    def f(z):
        return -alpha_gain * z

    for k in range(n_steps):
        k1 = f(delta)
        k2 = f(delta + 0.5 * h * k1)
        k3 = f(delta + 0.5 * h * k2)
        k4 = f(delta + h * k3)
        delta = delta + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        states[k + 1] = delta
    return times, states


def feedback_decay_check(delta0, alpha_gain: float, t_end: float, n_steps: int = 1000) -> float:
    """Max deviation of the RK4 solution from ``delta0 exp(-alpha t)`` over the grid."""
    times, states = integrate_feedback(delta0, alpha_gain, t_end, n_steps)
    exact = np.exp(-alpha_gain * times)[:, None] * np.atleast_1d(np.asarray(delta0, dtype=np.float64))[None, :]
    return float(np.max(np.abs(states - exact)))


def lipschitz_budget(T0: float) -> float:
    """``int_0^T0 dt / (1 - t) = ln(1 / (1 - T0))``."""
    if not 0 < T0 < 1:
        raise DomainError("the budget is finite only for 0 < T0 < 1")
    return -math.log1p(-T0)


@dataclass(frozen=True)
class VelocityBudget:
    integral: float
    analytic: float
    sup_norm_samples: float
    bound: float
    C: float


def velocity_budget(T0: float, n: int = BUDGET_N, n_states: int = 256, n_times: int = 64,
                    data_range: float = 1.0, dim: int = 2, seed: int = 0) -> VelocityBudget:
    """Quadrature of ``1/(1 - t)`` over ``[0, T0]`` and a sampled sup of the bridge velocity.

    States draw ``x0, y`` uniformly from ``[-data_range, data_range]^dim`` and
    ``xT ~ N(0, I)``. Since ``|v| <= |xT| + |x_tilde| + |y - x0| / T0``, the
    constant ``C = r_T + r + 2 r / T0`` (``r_T``, ``r`` the largest sampled
    noise and data norms) gives ``sup |v| <= C <= C / (1 - T0)``.
    """
    analytic = lipschitz_budget(T0)
    grid = np.linspace(0.0, T0, n)
    integral = float(trapezoid(1.0 / (1.0 - grid), grid))
    rng = Rng(seed, (13,))
    x0 = rng.uniform(-data_range, data_range, (n_states, dim))
    y = rng.uniform(-data_range, data_range, (n_states, dim))
    xT = rng.normal((n_states, dim))
    sup = 0.0
    for t in np.linspace(0.0, T0, n_times):
        v = bridge_velocity(x0, xT - x0, y, t, T0)
        sup = max(sup, float(np.max(np.linalg.norm(v, axis=1))))
    r_T = float(np.max(np.linalg.norm(xT, axis=1)))
    r = float(max(np.max(np.linalg.norm(x0, axis=1)), np.max(np.linalg.norm(y, axis=1))))
    C = r_T + r + 2.0 * r / T0
    return VelocityBudget(integral, analytic, sup, C / (1.0 - T0), C)


def geodesic_fn(x0, y, T0: float) -> PathFn:
    return lambda t: interp_geodesic(x0, y, t, T0)


__all__ = [
    "EnergyReport", "AdaptationEnergyGrid", "VelocityBudget", "kinetic_energy", "control_energy",
    "jensen_check", "energy_report", "closed_form_kinetic", "adaptation_energy",
    "adaptation_energy_landscape", "adaptation_energy_mc", "integrate_feedback",
    "feedback_decay_check", "lipschitz_budget", "velocity_budget", "path_fn", "drift_fn",
    "geodesic_fn", "horizon",
]
