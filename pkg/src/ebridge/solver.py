"""Closed-form single-step solver, multistep consistency sampler and the
iterative Euler baseline.

Substituting ``eps = xT - x0`` into the bridge state gives an equation that is
linear in ``x0``::

    x_t = A(t) y + B(t) eps + C(t) x0
    A = (1 - t) t / T0,   B = t,   C = 1 - A

so the clean estimate is ``(x_t - A y - B eps) / C``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, DomainError, InputError, NumericError
from .numcore import Rng, as_batch
from .trajectory import _col, bridge_point, bridge_velocity, start_point

_TOL = 1e-12


@dataclass(frozen=True)
class SolverCoeffs:
    A: np.ndarray | float
    B: np.ndarray | float
    C: np.ndarray | float
    t: np.ndarray | float
    T0: np.ndarray | float


def solver_coeffs(t, T0) -> SolverCoeffs:
    t_arr = np.asarray(t, dtype=np.float64)
    T0_arr = np.asarray(T0, dtype=np.float64)
    if np.any(T0_arr <= 0) or np.any(T0_arr > 1):
        raise DomainError("T0 must lie in (0, 1]")
    if np.any(t_arr < -_TOL) or np.any(t_arr > T0_arr + _TOL):
        raise DomainError("t must lie in [0, T0]")
    A = (1.0 - t_arr) * (t_arr / T0_arr)
    C = 1.0 - A
    if t_arr.ndim == 0:
        return SolverCoeffs(float(A), float(t_arr), float(C), float(t_arr), float(T0_arr))
    return SolverCoeffs(A, t_arr.copy(), C, t_arr.copy(), np.broadcast_to(T0_arr, t_arr.shape).copy())


def min_C(T0: float) -> float:
    """Analytic minimum of ``C`` over ``t in [0, T0]``, attained at ``t = min(1/2, T0)``."""
    return 1.0 - 1.0 / (4.0 * T0) if T0 >= 0.5 else T0


def solve_from_eps(x_t, y, eps, coeffs: SolverCoeffs) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    C = np.asarray(coeffs.C)
    if np.any(C <= 0):
        raise NumericError("solver denominator C(t) is not positive")
    A, B, C = (_col(c, x_t) for c in (coeffs.A, coeffs.B, coeffs.C))
    return (x_t - A * np.asarray(y) - B * np.asarray(eps)) / C


class NFECounter:
    """Wraps a denoiser and counts forward calls.

    One batched call evaluates every row once, so ``calls`` is the number of
    function evaluations per sample.
    """

    def __init__(self, net):
        self.net = net
        self.calls = 0

    def __call__(self, x, t, cond):
        self.calls += 1
        return self.net(x, t, cond)

    def target_net(self):
        return self.net.target_net()


class OracleDenoiser:
    """Exact terminal-noise field for known clean states ``x0``.

    Returns ``(x - A y - C x0) / B``, the unique ``eps`` that makes the solver
    output ``x0`` at any state. At ``t = 0`` (where ``B = 0``) it returns zeros;
    the solver ignores ``eps`` there. ``T0`` must be supplied because the
    network signature carries only ``t``.
    """

    def __init__(self, x0, T0):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.T0 = T0

    def __call__(self, x, t, y):
        x = np.asarray(x, dtype=np.float64)
        c = solver_coeffs(t, self.T0)
        A, B, C = (_col(v, x) for v in (c.A, c.B, c.C))
        safe_B = np.where(B > 0, B, 1.0)
        return np.where(B > 0, (x - A * np.asarray(y) - C * self.x0) / safe_B, 0.0)

    def target_net(self):
        return self


def consistency_solve(net, x_t, y, t, T0, use_target: bool = False) -> np.ndarray:
    """Single network evaluation followed by the closed-form inversion."""
    x_t = np.asarray(x_t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x_t.shape != y.shape:
        raise InputError(f"x_t {x_t.shape} and y {y.shape} differ")
    coeffs = solver_coeffs(t, T0)
    model = net.target_net() if use_target else net
    eps = model(x_t, t, y)
    return solve_from_eps(x_t, y, eps, coeffs)


@dataclass(frozen=True)
class SampleSchedule:
    kind: Literal["uniform", "geometric"]
    times: tuple[float, ...]
    nfe: int

    def __post_init__(self):
        if self.nfe < 1 or len(self.times) != self.nfe:
            raise ConfigError("schedule must hold nfe >= 1 times")
        if any(b >= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("schedule times must be strictly decreasing")
        if self.times[-1] <= 0:
            raise ConfigError("schedule times must be positive")


def make_schedule(T0: float, nfe: int, kind: str = "uniform") -> SampleSchedule:
    """Descending solve times starting at ``T0``.

    uniform:   ``T0 (nfe - i) / nfe``
    geometric: ``T0 nfe**(-i / (nfe - 1))``, same first and last time as uniform
    """
    if not 0 < T0 <= 1:
        raise DomainError("T0 must lie in (0, 1]")
    if nfe < 1:
        raise ConfigError("nfe must be >= 1")
    i = np.arange(nfe)
    if kind == "uniform":
        times = T0 * ((nfe - i) / nfe)
    elif kind == "geometric":
        times = T0 * float(nfe) ** (-i / max(nfe - 1, 1))
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return SampleSchedule(kind, tuple(float(v) for v in times), nfe)


def consistency_sample(net, y, T0: float, schedule: SampleSchedule, rng: Rng, xT=None) -> np.ndarray:
    """Solve from the restoration start, then alternately re-noise and re-solve.

    Each re-noising step rebuilds the bridge state at the next schedule time
    from the current estimate with a fresh Gaussian draw.
    """
    y = np.asarray(y, dtype=np.float64)
    if abs(schedule.times[0] - T0) > _TOL:
        raise ConfigError("schedule must start at T0")
    x, _ = start_point(y, T0, rng, xT=xT)
    xhat0 = x
    for i, t in enumerate(schedule.times):
        xhat0 = consistency_solve(net, x, y, t, T0)
        if i + 1 < len(schedule.times):
            t_next = schedule.times[i + 1]
            x = bridge_point(xhat0, y, rng.normal(y.shape), t_next, T0)
    return xhat0


def ode_sample(net, y, T0: float, steps: int, rng: Rng, xT=None) -> np.ndarray:
    """Explicit Euler on the bridge velocity from ``t = T0`` down to ``t = 0``.

    At each grid time: ``eps = net(x, t, y)``, ``x0_hat`` from the closed-form
    solver, velocity from ``bridge_velocity(x0_hat, eps, y, t, T0)``.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    y = np.asarray(y, dtype=np.float64)
    x, _ = start_point(y, T0, rng, xT=xT)
    grid = T0 * (1.0 - np.arange(steps + 1) / steps)
    for t, t_next in zip(grid[:-1], grid[1:]):
        eps = net(x, t, y)
        xhat0 = solve_from_eps(x, y, eps, solver_coeffs(t, T0))
        v = bridge_velocity(xhat0, eps, y, t, T0)
        x = x - (t - t_next) * v
    return x


def oracle_inversion_error(x0, y, xT, t, T0, coeffs: SolverCoeffs | None = None) -> np.ndarray:
    """Per-row relative error ``|F(x_t) - x0| / (1 + |x0|)`` with ``eps = xT - x0``."""
    x0, _ = as_batch(x0)
    y, _ = as_batch(y)
    xT, _ = as_batch(xT)
    x_t = bridge_point(x0, y, xT, t, T0)
    coeffs = solver_coeffs(t, T0) if coeffs is None else coeffs
    est = solve_from_eps(x_t, y, xT - x0, coeffs)
    return np.linalg.norm(est - x0, axis=1) / (1.0 + np.linalg.norm(x0, axis=1))


__all__ = [
    "SolverCoeffs", "SampleSchedule", "solver_coeffs", "min_C", "solve_from_eps",
    "consistency_solve", "consistency_sample", "ode_sample", "make_schedule",
    "NFECounter", "OracleDenoiser", "oracle_inversion_error",
]
