"""States, mean paths and velocities of the energy-oriented bridge and of the
baseline trajectories it is compared against.

The bridge runs over ``t in [0, T0]``. Its data part moves along the straight
line between the clean state ``x0`` (t=0) and the degraded state ``y``
(t=T0); the noisy state mixes that point with a terminal Gaussian draw using
the rectified-flow schedule ``alpha_t = 1 - t``, ``beta_t = t``::

    x_tilde(t) = (1 - t/T0) x0 + (t/T0) y
    x_t        = (1 - t) x_tilde(t) + t xT

Time arguments may be scalars or per-sample arrays of shape ``(N,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, DomainError, InputError
from .numcore import Rng

KINDS = ("EBridge", "StandardDiffusion", "I2SBBridge", "OUMeanPath")
_TOL = 1e-12


@dataclass(frozen=True)
class TrajectoryParams:
    kind: Literal["EBridge", "StandardDiffusion", "I2SBBridge", "OUMeanPath"] = "EBridge"
    T0: float = 1.0
    sigma: float = 0.0
    theta: float = 1.0
    alpha_schedule: str = "linear"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if not 0.0 < self.T0 <= 1.0:
            raise ConfigError(f"T0 must lie in (0, 1], got {self.T0}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.kind == "OUMeanPath" and self.theta <= 0:
            raise ConfigError("theta must be > 0 for the OU mean path")
        if self.alpha_schedule != "linear":
            raise ConfigError("only the linear schedule alpha_t = 1 - t is supported")


@dataclass(frozen=True, eq=False)
class BridgeBatch:
    """One training tuple per row; ``t`` and ``T0`` have shape ``(N,)``."""

    x0: np.ndarray
    y: np.ndarray
    xT: np.ndarray
    t: np.ndarray
    T0: np.ndarray
    x_tilde: np.ndarray
    x_t: np.ndarray

    def __len__(self):
        return self.x0.shape[0]


def _col(v, x: np.ndarray):
    """Shape a scalar or per-row value so it broadcasts against ``x``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or x.ndim == 1:
        return v
    return v.reshape(-1, *([1] * (x.ndim - 1)))


def _check_horizon(T0):
    T0 = np.asarray(T0, dtype=np.float64)
    if np.any(T0 <= 0.0) or np.any(T0 > 1.0):
        raise DomainError(f"T0 must lie in (0, 1], got {T0}")


def _check_time(t, T0, allow_zero=True):
    t = np.asarray(t, dtype=np.float64)
    lo_bad = (t < -_TOL) if allow_zero else (t <= 0.0)
    if np.any(lo_bad) or np.any(t > np.asarray(T0) + _TOL):
        rng = "[0, T0]" if allow_zero else "(0, T0]"
        raise DomainError(f"t must lie in {rng}")


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise InputError(f"state shapes differ: {sorted(shapes)}")


def interp_geodesic(x0, y, t, T0) -> np.ndarray:
    """Constant-velocity point ``(1 - t/T0) x0 + (t/T0) y``."""
    x0 = np.asarray(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x0, y)
    _check_horizon(T0)
    _check_time(t, T0)
    tau = _col(t, x0) / _col(T0, x0)
    return (1.0 - tau) * x0 + tau * y


def diffuse_state(x0, y, xT, t, T0) -> BridgeBatch:
    """Build the bridge state for ``t in (0, T0]`` (``t = 0`` is never sampled in training)."""
    x0, y, xT = (np.asarray(a, dtype=np.float64) for a in (x0, y, xT))
    _same_shape(x0, y, xT)
    _check_horizon(T0)
    _check_time(t, T0, allow_zero=False)
    return _build(x0, y, xT, t, T0)


def _build(x0, y, xT, t, T0) -> BridgeBatch:
    x_tilde = interp_geodesic(x0, y, t, T0)
    tc = _col(t, x0)
    x_t = (1.0 - tc) * x_tilde + tc * xT
    n = x0.shape[0] if x0.ndim == 2 else 1
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy()
    T0_arr = np.broadcast_to(np.asarray(T0, dtype=np.float64), (n,)).copy()
    return BridgeBatch(x0, y, xT, t_arr, T0_arr, x_tilde, x_t)


def bridge_point(x0, y, xT, t, T0) -> np.ndarray:
    """``x_t`` for ``t in [0, T0]``, including the clean endpoint ``t = 0``."""
    x0, y, xT = (np.asarray(a, dtype=np.float64) for a in (x0, y, xT))
    tc = _col(t, x0)
    return (1.0 - tc) * interp_geodesic(x0, y, t, T0) + tc * xT


def start_point(y, T0: float, rng: Rng, xT=None) -> tuple[np.ndarray, np.ndarray]:
    """Restoration start ``(1 - T0) y + T0 xT`` with ``xT ~ N(0, I)``.

    Returns ``(start, xT)``. Passing ``xT`` skips the draw.
    """
    y = np.asarray(y, dtype=np.float64)
    _check_horizon(T0)
    if xT is None:
        xT = rng.normal(y.shape)
    xT = np.asarray(xT, dtype=np.float64)
    _same_shape(y, xT)
    T0c = _col(T0, y)
    return (1.0 - T0c) * y + T0c * xT, xT


def mean_path(params: TrajectoryParams, x0, y, t) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    kind = params.kind
    if kind == "EBridge":
        return interp_geodesic(x0, y, t, params.T0)
    if t < 0:
        raise DomainError("t must be >= 0")
    if kind == "OUMeanPath":
        # OU reverts toward y on [0, inf)
        return y + (x0 - y) * math.exp(-params.theta * t)
    if t > 1.0 + _TOL:
        raise DomainError("t must lie in [0, 1]")
    if kind == "StandardDiffusion":
        return (1.0 - t) * x0
    if kind == "I2SBBridge":
        return (1.0 - t) * x0 + t * y
    raise ConfigError(f"unknown trajectory kind {kind!r}")


def mean_velocity(params: TrajectoryParams, x0, y, t) -> np.ndarray:
    """Analytic time derivative of ``mean_path``."""
    x0 = np.asarray(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    kind = params.kind
    if kind == "EBridge":
        return (y - x0) / params.T0
    if kind == "OUMeanPath":
        return -params.theta * (x0 - y) * math.exp(-params.theta * t)
    if kind == "StandardDiffusion":
        return -x0
    if kind == "I2SBBridge":
        return y - x0
    raise ConfigError(f"unknown trajectory kind {kind!r}")


def i2sb_std(t, sigma: float):
    t = np.asarray(t, dtype=np.float64)
    return sigma * np.sqrt(np.clip(t * (1.0 - t), 0.0, None))


def i2sb_state(x0, y, t, sigma: float, rng: Rng) -> np.ndarray:
    """Sample ``N((1-t) x0 + t y, sigma^2 t (1-t) I)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x0, y)
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > 1):
        raise DomainError("t must lie in [0, 1]")
    tc = _col(t, x0)
    noise = rng.normal(x0.shape)
    return (1.0 - tc) * x0 + tc * y + _col(i2sb_std(t, sigma), x0) * noise


def standard_diffusion_state(x0, xT, t) -> np.ndarray:
    """Rectified-flow line ``(1 - t) x0 + t xT``; ``y`` enters only as conditioning."""
    tc = _col(t, np.asarray(x0))
    return (1.0 - tc) * np.asarray(x0) + tc * np.asarray(xT)


def bridge_velocity(xhat0, eps, y, t, T0) -> np.ndarray:
    """Probability-flow velocity ``(xT - x_tilde) + ((1 - t)/T0) (y - x0)``.

    ``xT`` is rebuilt as ``eps + xhat0`` and ``x_tilde`` from ``(xhat0, y)``.
    """
    xhat0, eps, y = (np.asarray(a, dtype=np.float64) for a in (xhat0, eps, y))
    _same_shape(xhat0, eps, y)
    xT = eps + xhat0
    x_tilde = interp_geodesic(xhat0, y, t, T0)
    return (xT - x_tilde) + _col((1.0 - np.asarray(t)) / np.asarray(T0), xhat0) * (y - xhat0)
