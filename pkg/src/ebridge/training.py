"""Flow-matching warmup and consistency fine-tuning of the denoiser.

The consistency update follows the continuous-time rule: descend along
``grad_theta <F_theta(x_t), sg(dF_target/dt)>``, where the total derivative is
taken along the realized bridge path of fixed ``(x0, y, xT)``. Since that path
is known in closed form, the derivative is a central difference in ``t`` with
the states rebuilt analytically at ``t +- h``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, TrainingError
from .numcore import (Denoiser, OptState, Rng, adam_init, adam_step,
                      backward_from_cache, forward_with_cache, global_norm,
                      mlp_init)
from .solver import consistency_solve, solve_from_eps, solver_coeffs
from .trajectory import BridgeBatch, _build, bridge_point

LOSS_MODES = ("continuous_consistency", "discrete_consistency", "flow_pretrain")
LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    T0_range: tuple[float, float] = (0.2, 0.95)
    batch_size: int = 256
    steps: int = 2000
    pretrain_steps: int = 2000
    lr: float = 2e-3
    finetune_lr: float = 3e-6
    lr_schedule: str = "cosine"
    fd_step_h: float = 1e-3
    loss_mode: str = "continuous_consistency"
    ema_decay: float = 0.0
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        lo, hi = self.T0_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"T0_range must satisfy 0 < low <= high <= 1, got {self.T0_range}")
        if not 0 < self.fd_step_h <= 0.01:
            raise ConfigError("fd_step_h must lie in (0, 0.01]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0 or self.pretrain_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.lr <= 0 or self.finetune_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")


def scheduled_lr(base: float, k: int, n: int, schedule: str) -> float:
    """Learning rate for step ``k`` of an ``n``-step phase (cosine decays to 0)."""
    if schedule == "constant" or n <= 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * k / n))


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (128, 128)
    time_embed_dim: int = 8

    def layer_dims(self, state_dim: int) -> list[int]:
        return [2 * state_dim + self.time_embed_dim, *self.hidden, state_dim]


@dataclass(frozen=True)
class StepDiagnostics:
    inconsistency_norm: float
    surrogate_value: float
    grad_norm: float
    step: int

    def __post_init__(self):
        for name in ("inconsistency_norm", "surrogate_value", "grad_norm"):
            if not np.isfinite(getattr(self, name)):
                raise TrainingError(f"non-finite {name} at step {self.step}: {self}")


def sample_batch(clean, degraded, config: TrainConfig, rng: Rng) -> BridgeBatch:
    """Draw pairs, a per-sample horizon ``T0 ~ U(T0_range)``, ``t ~ U(0, T0]`` and ``xT ~ N(0, I)``."""
    n = clean.shape[0]
    if n == 0:
        raise ConfigError("dataset is empty")
    b = config.batch_size
    idx = rng.integers(0, n, b)
    lo, hi = config.T0_range
    T0 = rng.uniform(lo, hi, b) if hi > lo else np.full(b, lo)
    t = T0 * (1.0 - rng.uniform(0.0, 1.0, b))
    xT = rng.normal((b, clean.shape[1]))
    return _build(clean[idx], degraded[idx], xT, t, T0)


def flow_loss_and_grads(net: Denoiser, batch: BridgeBatch):
    """Mean over the batch of ``|eps(x_t, t, y) - (xT - x0)|^2`` and its gradient."""
    out, cache = forward_with_cache(net, batch.x_t, batch.t, batch.y)
    resid = out - (batch.xT - batch.x0)
    n = resid.shape[0]
    loss = float(np.sum(resid * resid) / n)
    if not np.isfinite(loss):
        raise TrainingError("non-finite regression loss")
    return loss, backward_from_cache(net, cache, 2.0 * resid / n)


def flow_pretrain_step(net: Denoiser, batch: BridgeBatch, opt: OptState):
    """One Adam step of the terminal-noise regression. Returns ``(net, opt, pre-step loss)``."""
    loss, grads = flow_loss_and_grads(net, batch)
    params, opt = adam_step(net.params(), grads, opt)
    return net.with_params(params), opt, loss


def _stencil(t, T0, h):
    """Per-row 3-point stencil times and weights for d/dt on ``[0, T0]``."""
    n = t.shape[0]
    s = np.stack([t - h, t + h, t], axis=1)
    w = np.stack([-0.5 / h, 0.5 / h, np.zeros(n)], axis=1)
    back = t + h > T0
    fwd = (t - h < 0) & ~back
    if np.any(back):
        s[back] = np.stack([t, t - h, t - 2 * h], axis=1)[back]
        w[back] = (np.array([1.5, -2.0, 0.5])[None, :] / h[:, None])[back]
    if np.any(fwd):
        s[fwd] = np.stack([t, t + h, t + 2 * h], axis=1)[fwd]
        w[fwd] = (np.array([-1.5, 2.0, -0.5])[None, :] / h[:, None])[fwd]
    return np.clip(s, 0.0, T0[:, None]), w


def total_derivative(target, x0, y, xT, t, T0, h, F: Callable | None = None) -> np.ndarray:
    """``dF/dt`` of the target solver along the path of fixed ``(x0, y, xT)``.

    Central difference with step ``h``; second-order one-sided stencils where
    ``t +- h`` leaves ``[0, T0]``. ``F(x, y, t, T0)`` replaces the solver when
    given (used with test doubles).
    """
    x0, y, xT = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x0, y, xT))
    n = x0.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).astype(np.float64)
    T0 = np.broadcast_to(np.asarray(T0, dtype=np.float64), (n,)).astype(np.float64)
    h = np.broadcast_to(np.asarray(h, dtype=np.float64), (n,)).astype(np.float64)
    if np.any(h <= 0) or np.any(2 * h > T0):
        raise ConfigError("finite-difference step must satisfy 0 < 2h <= T0")
    if F is None:
        def F(x, yy, tt, TT):
            return consistency_solve(target, x, yy, tt, TT)
    s, w = _stencil(t, T0, h)
    out = np.zeros_like(x0)
    for j in range(3):
        if not np.any(w[:, j]):
            continue
        # whole-batch calls keep row-indexed fields (oracles) aligned
        xs = bridge_point(x0, y, xT, s[:, j], T0)
        out += w[:, j][:, None] * F(xs, y, s[:, j], T0)
    return out


def consistency_grads(net: Denoiser, target, batch: BridgeBatch, fd_step_h: float,
                      loss_mode: str = "continuous_consistency", tangent=None, base=None):
    """Parameter gradient of the consistency objective for one batch.

    ``continuous_consistency``: surrogate ``mean <F_theta, sg(dF_target/dt)>``
    averaged over batch and state dimension; ``tangent`` overrides the
    finite-difference estimate. ``discrete_consistency``:
    ``mean |F_theta(x_t, t) - sg F_target(x_t', t')|^2`` with ``t' = t - h``
    on the same realized path.

    ``base(x, t, y)``, when given, is added to the network output so a
    known field can sit under a trainable residual.

    Returns ``(grads, surrogate_value, inconsistency_norm)``.
    """
    h = fd_step_h * batch.T0
    n, d = batch.x_t.shape
    out, cache = forward_with_cache(net, batch.x_t, batch.t, batch.y)
    if base is not None:
        out = out + base(batch.x_t, batch.t, batch.y)
    coeffs = solver_coeffs(batch.t, batch.T0)
    F = solve_from_eps(batch.x_t, batch.y, out, coeffs)
    dF_deps = -(coeffs.B / coeffs.C)[:, None]
    if loss_mode == "continuous_consistency":
        if tangent is None:
            tangent = total_derivative(target, batch.x0, batch.y, batch.xT, batch.t, batch.T0, h)
        tangent = np.array(tangent, dtype=np.float64)
        value = float(np.sum(F * tangent) / (n * d))
        cot = dF_deps * tangent / (n * d)
    elif loss_mode == "discrete_consistency":
        t_prev = np.clip(batch.t - h, 0.0, None)
        x_prev = bridge_point(batch.x0, batch.y, batch.xT, t_prev, batch.T0)
        F_prev = consistency_solve(target, x_prev, batch.y, t_prev, batch.T0)
        diff = F - F_prev
        tangent = diff / h[:, None]
        value = float(np.sum(diff * diff) / (n * d))
        cot = dF_deps * 2.0 * diff / (n * d)
    else:
        raise ConfigError(f"{loss_mode!r} is not a consistency mode")
    if not np.isfinite(value):
        raise TrainingError("non-finite consistency objective")
    grads = backward_from_cache(net, cache, cot)
    inconsistency = float(np.mean(np.linalg.norm(tangent, axis=1)))
    return grads, value, inconsistency


def ema_update(net: Denoiser, decay: float) -> Denoiser:
    """``target <- decay * target + (1 - decay) * online``; decay 0 copies the online weights."""
    new = [decay * tp + (1.0 - decay) * p for tp, p in zip(net.target_params(), net.params())]
    return net.with_target(new)


def consistency_step(net: Denoiser, config: TrainConfig, dataset, opt: OptState, rng: Rng,
                     target=None, step: int = 0, base=None):
    """One consistency update on a fresh batch. Returns ``(net, opt, StepDiagnostics)``.

    ``target`` defaults to ``net.target_net()``; the target only ever receives
    forward calls.
    """
    clean, degraded = _arrays(dataset)
    batch = sample_batch(clean, degraded, config, rng)
    target = net.target_net() if target is None else target
    grads, value, incons = consistency_grads(net, target, batch, config.fd_step_h, config.loss_mode, base=base)
    diag = StepDiagnostics(incons, value, global_norm(grads), step)
    params, opt = adam_step(net.params(), grads, opt)
    net = ema_update(net.with_params(params), config.ema_decay)
    return net, opt, diag


def _arrays(dataset):
    if hasattr(dataset, "clean"):
        return dataset.clean, dataset.degraded
    clean, degraded = dataset
    return np.asarray(clean), np.asarray(degraded)


def mean_inconsistency(net: Denoiser, dataset, config: TrainConfig, seed: int = 12345, batches: int = 4) -> float:
    """Average ``|dF/dt|`` of the online network over a few fixed evaluation batches."""
    clean, degraded = _arrays(dataset)
    rng = Rng(seed, (7,))
    vals = []
    for _ in range(batches):
        b = sample_batch(clean, degraded, config, rng)
        tan = total_derivative(net, b.x0, b.y, b.xT, b.t, b.T0, config.fd_step_h * b.T0)
        vals.append(np.mean(np.linalg.norm(tan, axis=1)))
    return float(np.mean(vals))


@dataclass
class TrainResult:
    net: Denoiser
    history: list[dict] = field(default_factory=list)
    trained_steps: int = 0


def train(config: TrainConfig, dataset, model: ModelConfig = ModelConfig(),
          log: Callable[[dict], None] | None = None) -> TrainResult:
    """Regression warmup (``pretrain_steps``) then ``steps`` updates of ``loss_mode``.

    Deterministic given ``config.seed``. ``log`` receives one record per
    ``log_every`` steps with keys ``step, loss_mode, surrogate_value,
    inconsistency_norm, grad_norm, wall_ms``.
    """
    clean, degraded = _arrays(dataset)
    if clean.shape[0] == 0:
        raise ConfigError("dataset is empty")
    d = clean.shape[1]
    net = mlp_init(model.layer_dims(d), model.time_embed_dim, config.seed)
    rng = Rng(config.seed, (2,))
    history = []
    t_start = time.perf_counter()

    def emit(step, mode, value, incons, gnorm):
        rec = {"step": step, "loss_mode": mode, "surrogate_value": value,
               "inconsistency_norm": incons, "grad_norm": gnorm,
               "wall_ms": round(1000.0 * (time.perf_counter() - t_start), 3)}
        history.append(rec)
        if log is not None:
            log(rec)

    n_flow = config.pretrain_steps + (config.steps if config.loss_mode == "flow_pretrain" else 0)
    opt = adam_init(net.params(), config.lr)
    for k in range(n_flow):
        opt = replace(opt, learning_rate=scheduled_lr(config.lr, k, n_flow, config.lr_schedule))
        batch = sample_batch(clean, degraded, config, rng)
        loss, grads = flow_loss_and_grads(net, batch)
        params, opt = adam_step(net.params(), grads, opt)
        net = net.with_params(params)
        if (k + 1) % config.log_every == 0 or k == 0:
            emit(k + 1, "flow_pretrain", loss, None, global_norm(grads))
    net = net.with_target(net.params())
    if config.loss_mode != "flow_pretrain":
        opt = adam_init(net.params(), config.finetune_lr)
        for k in range(config.steps):
            step = n_flow + k + 1
            opt = replace(opt, learning_rate=scheduled_lr(config.finetune_lr, k, config.steps, config.lr_schedule))
            net, opt, diag = consistency_step(net, config, (clean, degraded), opt, rng, step=step)
            if (k + 1) % config.log_every == 0 or k == 0:
                emit(step, config.loss_mode, diag.surrogate_value, diag.inconsistency_norm, diag.grad_norm)
        total = n_flow + config.steps
    else:
        total = n_flow
    for p in net.params():
        if not np.all(np.isfinite(p)):
            raise TrainingError("training produced non-finite parameters")
    return TrainResult(net, history, total)
