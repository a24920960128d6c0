"""Dense float64 arithmetic, seeded randomness, the time-conditioned MLP
denoiser with hand-written reverse mode, and the Adam update.

States are plain ``numpy.ndarray`` values of dtype float64. Batched calls use
shape ``(N, d)``; a single state of shape ``(d,)`` is accepted everywhere and
returned with the same rank.

Random streams come from numpy's PCG64 bit generator seeded through a
``SeedSequence(seed, spawn_key=(stream,))``. PCG64 and the SeedSequence
hashing are fixed, documented algorithms, so a given ``(seed, stream)`` pair
produces the same draws on every platform.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputError, TrainingError

CHECKPOINT_FORMAT = "EBRG"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("silu",)


class Rng:
    """Seeded PCG64 stream. ``spawn`` derives independent child streams."""

    def __init__(self, seed: int, stream: Sequence[int] = ()):
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, key: int) -> "Rng":
        return Rng(self.seed, self.stream + (key,))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def as_batch(x, name="x") -> tuple[np.ndarray, bool]:
    """Promote ``(d,)`` to ``(1, d)``; returns the array and whether it was promoted."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise InputError(f"{name} must have shape (d,) or (N, d), got {x.shape}")
    return x, False


def as_times(t, n: int, name="t") -> np.ndarray:
    """Broadcast a scalar or per-sample time to a column of shape ``(n, 1)``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return np.full((n, 1), float(t))
    t = t.reshape(-1)
    if t.shape[0] != n:
        raise InputError(f"{name} has {t.shape[0]} entries for a batch of {n}")
    return t[:, None]


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of ``t`` (shape ``(N, 1)``) with ``dim`` columns.

    Column ``j`` uses frequency ``2**(j // 2)``: even columns are
    ``sin(2**k * pi * t)``, odd columns ``cos(2**k * pi * t)``.
    """
    if dim == 0:
        return np.zeros((t.shape[0], 0))
    k = np.arange(dim) // 2
    phase = np.pi * (2.0**k)[None, :] * t
    return np.where(np.arange(dim) % 2 == 0, np.sin(phase), np.cos(phase))


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass(frozen=True, eq=False)
class Denoiser:
    """MLP ``eps(x, t, cond)``; input is ``[x, time_embedding(t), cond]``.

    ``weights[k]`` has shape ``(layer_dims[k+1], layer_dims[k])``. The target
    parameters are the stop-gradient copy used by consistency training; they
    are only ever replaced wholesale, never differentiated.
    """

    layer_dims: tuple[int, ...]
    time_embed_dim: int
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "silu"
    target_weights: tuple[np.ndarray, ...] | None = None
    target_biases: tuple[np.ndarray, ...] | None = None

    @property
    def state_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def cond_dim(self) -> int:
        return self.layer_dims[0] - self.time_embed_dim - self.state_dim

    def params(self) -> list[np.ndarray]:
        """Flat parameter list in the order ``[W1, b1, W2, b2, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Denoiser":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    def target_params(self) -> list[np.ndarray]:
        if self.target_weights is None:
            return self.params()
        out = []
        for w, b in zip(self.target_weights, self.target_biases):
            out += [w, b]
        return out

    def with_target(self, params: Sequence[np.ndarray]) -> "Denoiser":
        return replace(
            self,
            target_weights=tuple(np.array(p) for p in params[0::2]),
            target_biases=tuple(np.array(p) for p in params[1::2]),
        )

    def target_net(self) -> "Denoiser":
        """The frozen copy as a standalone network (no target of its own)."""
        p = self.target_params()
        return replace(
            self,
            weights=tuple(p[0::2]),
            biases=tuple(p[1::2]),
            target_weights=None,
            target_biases=None,
        )

    def __call__(self, x, t, cond):
        return mlp_forward(self, x, t, cond)


def _check_dims(layer_dims, time_embed_dim):
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ConfigError(f"layer_dims must hold at least two positive ints, got {layer_dims}")
    if time_embed_dim < 0:
        raise ConfigError("time_embed_dim must be >= 0")
    if layer_dims[0] < layer_dims[-1] + time_embed_dim:
        raise ConfigError(
            f"input dim {layer_dims[0]} cannot hold state dim {layer_dims[-1]} "
            f"plus {time_embed_dim} time features"
        )
    return tuple(layer_dims)


def mlp_init(layer_dims: Sequence[int], time_embed_dim: int, seed: int) -> Denoiser:
    """Fan-in scaled uniform weights, ``Var = 1/fan_in``; zero biases."""
    dims = _check_dims(layer_dims, time_embed_dim)
    rng = Rng(seed, (0x1417,))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    net = Denoiser(dims, int(time_embed_dim), tuple(weights), tuple(biases))
    return net.with_target(net.params())


def init_target_variance(fan_in: int) -> float:
    return 1.0 / fan_in


def _net_input(net: Denoiser, x, t, cond):
    x, squeeze = as_batch(x, "x")
    if x.shape[1] != net.state_dim:
        raise InputError(f"x has dim {x.shape[1]}, network expects {net.state_dim}")
    if net.cond_dim == 0:
        # unconditional net: the condition argument is not an input
        cond = np.zeros((x.shape[0], 0))
    cond, _ = as_batch(cond, "cond")
    if cond.shape[1] != net.cond_dim:
        raise InputError(f"cond has dim {cond.shape[1]}, network expects {net.cond_dim}")
    if cond.shape[0] != x.shape[0]:
        raise InputError(f"batch mismatch: x {x.shape[0]}, cond {cond.shape[0]}")
    tc = as_times(t, x.shape[0])
    if np.any(tc < 0.0) or np.any(tc > 1.0):
        raise InputError("t must lie in [0, 1]")
    h = np.concatenate([x, time_embedding(tc, net.time_embed_dim), cond], axis=1)
    return h, squeeze


def _forward_cached(net: Denoiser, h: np.ndarray):
    acts, pre = [h], []
    n_layers = len(net.weights)
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(z if k == n_layers - 1 else _silu(z))
    return acts[-1], (acts, pre)


def _backward_cached(net: Denoiser, cache, cot: np.ndarray) -> list[np.ndarray]:
    acts, pre = cache
    grads = [None] * (2 * len(net.weights))
    g = cot
    for k in range(len(net.weights) - 1, -1, -1):
        if k < len(net.weights) - 1:
            g = g * _silu_grad(pre[k])
        grads[2 * k] = g.T @ acts[k]
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = g @ net.weights[k]
    return grads


def forward_with_cache(net: Denoiser, x, t, cond):
    """Batched forward returning ``(out (N, d), cache)`` for ``backward_from_cache``."""
    h, _ = _net_input(net, x, t, cond)
    return _forward_cached(net, h)


def backward_from_cache(net: Denoiser, cache, out_cotangent) -> list[np.ndarray]:
    return _backward_cached(net, cache, np.asarray(out_cotangent, dtype=np.float64))


def mlp_forward(net: Denoiser, x, t, cond) -> np.ndarray:
    h, squeeze = _net_input(net, x, t, cond)
    out, _ = _forward_cached(net, h)
    return out[0] if squeeze else out


def mlp_backward(net: Denoiser, x, t, cond, out_cotangent) -> list[np.ndarray]:
    """Parameter gradients of ``sum(out * out_cotangent)``, summed over the batch."""
    h, squeeze = _net_input(net, x, t, cond)
    cot = np.asarray(out_cotangent, dtype=np.float64)
    if squeeze:
        cot = cot.reshape(1, -1)
    if cot.shape != (h.shape[0], net.state_dim):
        raise InputError(f"cotangent shape {cot.shape} does not match output {(h.shape[0], net.state_dim)}")
    _, cache = _forward_cached(net, h)
    return _backward_cached(net, cache, cot)


@dataclass(frozen=True, eq=False)
class OptState:
    step: int
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stabilizer: float = 1e-8


def adam_init(params: Sequence[np.ndarray], learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> OptState:
    zeros = tuple(np.zeros_like(p) for p in params)
    return OptState(0, zeros, tuple(np.zeros_like(p) for p in params), learning_rate, beta1, beta2, eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], opt: OptState):
    """One bias-corrected Adam update. Returns ``(new_params, new_opt)``."""
    if len(params) != len(grads) or len(params) != len(opt.first_moment):
        raise InputError("params, grads and optimizer state have different lengths")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise InputError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {i}")
    step = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, opt.first_moment, opt.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.eps_stabilizer))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(opt, step=step, first_moment=tuple(new_m), second_moment=tuple(new_v))


def global_norm(arrays: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in arrays))


# -- checkpoint file -------------------------------------------------------


def _fmt(obj) -> str:
    # floats at 17 significant digits round-trip exactly through float64
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise TrainingError("refusing to serialize a non-finite value")
        return format(float(obj), ".17g")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _fmt(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_fmt(v)}" for k, v in obj.items()) + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj) -> str:
    """Deterministic compact JSON with 17-significant-digit floats."""
    return _fmt(obj)


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_dict(net: Denoiser, *, ema_decay=0.0, trained_steps=0, seed=0, extra=None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(net.layer_dims),
        "time_embed_dim": net.time_embed_dim,
        "activation": net.activation,
        "weights": [w.reshape(-1) for w in net.weights],
        "biases": [b.reshape(-1) for b in net.biases],
        "ema_decay": float(ema_decay),
        "trained_steps": int(trained_steps),
        "seed": int(seed),
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(path, net: Denoiser, **kwargs) -> None:
    atomic_write_text(path, dumps_json(checkpoint_dict(net, **kwargs)) + "\n")


_REQUIRED_KEYS = ("format", "version", "layer_dims", "time_embed_dim", "activation",
                  "weights", "biases", "ema_decay", "trained_steps", "seed")


def net_from_checkpoint(doc: dict) -> Denoiser:
    missing = [k for k in _REQUIRED_KEYS if k not in doc]
    if missing:
        raise ConfigError(f"checkpoint is missing keys {missing}")
    if doc["format"] != CHECKPOINT_FORMAT or doc["version"] != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {doc['format']!r} v{doc['version']}")
    if doc["activation"] not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {doc['activation']!r}")
    dims = _check_dims(doc["layer_dims"], int(doc["time_embed_dim"]))
    if len(doc["weights"]) != len(dims) - 1 or len(doc["biases"]) != len(dims) - 1:
        raise ConfigError("checkpoint layer count does not match layer_dims")
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = np.asarray(doc["weights"][k], dtype=np.float64)
        b = np.asarray(doc["biases"][k], dtype=np.float64)
        if w.size != fan_in * fan_out or b.size != fan_out:
            raise ConfigError(f"layer {k} arrays do not match layer_dims")
        weights.append(w.reshape(fan_out, fan_in))
        biases.append(b.reshape(fan_out))
    net = Denoiser(dims, int(doc["time_embed_dim"]), tuple(weights), tuple(biases), doc["activation"])
    return net.with_target(net.params())


def load_checkpoint(path) -> tuple[Denoiser, dict]:
    """Returns the network (target set equal to the online weights) and the raw document."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: checkpoint must be a JSON object")
    return net_from_checkpoint(doc), doc


__all__ = [
    "Rng", "Denoiser", "OptState", "mlp_init", "mlp_forward", "mlp_backward",
    "forward_with_cache", "backward_from_cache", "adam_init", "adam_step",
    "time_embedding", "global_norm", "save_checkpoint", "load_checkpoint",
    "checkpoint_dict", "net_from_checkpoint", "dumps_json", "atomic_write_text",
]
