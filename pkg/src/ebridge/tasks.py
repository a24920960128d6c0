"""Synthetic paired restoration sets and evaluation metrics.

Geometry of the point clouds (fixed so that metric thresholds stay stable):

* ``moons2d``: the two interleaved half circles of radius 1 (upper arc centred
  at (0, 0), lower arc at (1, 0.5)), jittered by N(0, 0.05^2 I), shifted by
  (-0.5, -0.25) and scaled by 1/3. The cloud fits in roughly
  [-0.5, 0.5] x [-0.25, 0.25].
* ``rings2d``: two concentric circles of radius 0.25 and 0.5, jittered by
  N(0, 0.02^2 I).
* ``tinyimage``: H x W images in [0, 1] made of a flat background plus one
  bright axis-aligned rectangle, flattened row-major.

Clean samples use stream 0 of the task seed; sample ``i`` of the degradation
uses stream ``(1, i)``, so each pair is regenerable on its own.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, InputError
from .numcore import Rng

MOONS_RADIUS = 1.0
MOONS_JITTER = 0.05
MOONS_SHIFT = (-0.5, -0.25)
MOONS_SCALE = 1.0 / 3.0
RING_RADII = (0.25, 0.5)
RING_JITTER = 0.02
PSNR_PEAK = 1.0
KINDS = ("moons2d", "rings2d", "tinyimage")
DEGRADATIONS = ("gauss_noise", "blur_downsample", "mask")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "moons2d"
    n_samples: int = 4096
    dim: int = 2
    degradation: str = "gauss_noise"
    degradation_params: dict = field(default_factory=lambda: {"noise_sigma": 0.3})
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.degradation not in DEGRADATIONS:
            raise ConfigError(f"unknown degradation {self.degradation!r}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.kind == "tinyimage":
            side = math.isqrt(self.dim)
            if side * side != self.dim or side not in (8, 16):
                raise ConfigError("tinyimage dim must be 64 or 256")
        elif self.dim != 2:
            raise ConfigError(f"{self.kind} is two-dimensional")
        if self.degradation == "blur_downsample" and self.kind != "tinyimage":
            raise ConfigError("blur_downsample applies to tinyimage only")
        _check_params(self.degradation, self.degradation_params)


@dataclass(frozen=True, eq=False)
class PairedSet:
    clean: np.ndarray
    degraded: np.ndarray
    spec: TaskSpec

    def __len__(self):
        return self.clean.shape[0]


def _check_params(kind, params):
    if kind == "gauss_noise" and params.get("noise_sigma", 0.0) < 0:
        raise ConfigError("noise_sigma must be >= 0")
    if kind == "mask" and not 0 <= params.get("mask_fraction", 0.0) < 1:
        raise ConfigError("mask_fraction must lie in [0, 1)")
    if kind == "blur_downsample":
        if int(params.get("blur_width", 1)) < 1 or int(params.get("downsample", 2)) < 1:
            raise ConfigError("blur_width and downsample must be >= 1")


def _moons(n, rng):
    theta = rng.uniform(0.0, math.pi, n)
    upper = rng.integers(0, 2, n) == 0
    x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta)) * MOONS_RADIUS
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta)) * MOONS_RADIUS
    pts = np.stack([x, y], axis=1) + MOONS_JITTER * rng.normal((n, 2))
    return (pts + np.asarray(MOONS_SHIFT)) * MOONS_SCALE


def _rings(n, rng):
    theta = rng.uniform(0.0, 2 * math.pi, n)
    radius = np.asarray(RING_RADII)[rng.integers(0, 2, n)]
    pts = radius[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return pts + RING_JITTER * rng.normal((n, 2))


def _tinyimages(n, side, rng):
    img = np.empty((n, side, side))
    bg = rng.uniform(0.0, 0.3, n)
    fg = rng.uniform(0.6, 1.0, n)
    r0 = rng.integers(0, side // 2, n)
    c0 = rng.integers(0, side // 2, n)
    h = rng.integers(2, side // 2 + 1, n)
    w = rng.integers(2, side // 2 + 1, n)
    rows = np.arange(side)
    for i in range(n):
        inside = ((rows >= r0[i]) & (rows < r0[i] + h[i]))[:, None] & ((rows >= c0[i]) & (rows < c0[i] + w[i]))[None, :]
        img[i] = np.where(inside, fg[i], bg[i])
    return img.reshape(n, side * side)


def box_blur(img: np.ndarray, width: int) -> np.ndarray:
    """Separable box blur of a 2-D image with edge replication."""
    if width == 1:
        return img.copy()
    lo = (width - 1) // 2
    hi = width - 1 - lo
    out = img
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (lo, hi)
        p = np.pad(out, pad, mode="edge")
        c = np.cumsum(p, axis=axis)
        c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
        n = out.shape[axis]
        out = (np.take(c, np.arange(width, width + n), axis=axis) - np.take(c, np.arange(n), axis=axis)) / width
    return out


def degrade(x0, kind: str, params: dict, rng: Rng) -> np.ndarray:
    """Degrade one flattened state; output has the input's shape.

    * ``gauss_noise``: add N(0, noise_sigma^2 I).
    * ``blur_downsample``: box blur (``blur_width``), keep every
      ``downsample``-th pixel, then nearest-neighbour upsample back.
    * ``mask``: zero a contiguous run of ``round(mask_fraction * d)`` entries
      starting at a random offset.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1:
        raise InputError("degrade takes one flattened state")
    _check_params(kind, params)
    if kind == "gauss_noise":
        return x0 + float(params.get("noise_sigma", 0.0)) * rng.normal(x0.shape)
    if kind == "mask":
        d = x0.shape[0]
        length = int(round(float(params.get("mask_fraction", 0.0)) * d))
        out = x0.copy()
        if length:
            start = int(rng.integers(0, d - length + 1))
            out[start:start + length] = 0.0
        return out
    if kind == "blur_downsample":
        side = math.isqrt(x0.shape[0])
        if side * side != x0.shape[0]:
            raise InputError("blur_downsample needs a square image")
        k = int(params.get("downsample", 2))
        img = box_blur(x0.reshape(side, side), int(params.get("blur_width", 1)))
        low = img[::k, ::k]
        up = np.repeat(np.repeat(low, k, axis=0), k, axis=1)[:side, :side]
        return up.reshape(-1)
    raise ConfigError(f"unknown degradation {kind!r}")


def gen_clean(spec: TaskSpec) -> np.ndarray:
    rng = Rng(spec.seed, (0,))
    if spec.kind == "moons2d":
        return _moons(spec.n_samples, rng)
    if spec.kind == "rings2d":
        return _rings(spec.n_samples, rng)
    return _tinyimages(spec.n_samples, math.isqrt(spec.dim), rng)


def gen_pairs(spec: TaskSpec) -> PairedSet:
    clean = gen_clean(spec)
    if spec.degradation == "gauss_noise":
        # one vectorized draw per sample stream keeps this fast for large n
        sigma = float(spec.degradation_params.get("noise_sigma", 0.0))
        noise = np.stack([Rng(spec.seed, (1, i)).normal(spec.dim) for i in range(spec.n_samples)])
        degraded = clean + sigma * noise
    else:
        degraded = np.stack([
            degrade(clean[i], spec.degradation, spec.degradation_params, Rng(spec.seed, (1, i)))
            for i in range(spec.n_samples)
        ])
    return PairedSet(clean, degraded, spec)


def energy_distance(a, b, max_n: int = 1000) -> float:
    """V-statistic ``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` on the first ``max_n`` rows."""
    a = np.asarray(a, dtype=np.float64)[:max_n]
    b = np.asarray(b, dtype=np.float64)[:max_n]
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    return float(2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean())


def psnr(mse: float, peak: float = PSNR_PEAK) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def eval_metrics(pred, truth, max_n: int = 1000) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InputError(f"prediction shape {pred.shape} differs from truth {truth.shape}")
    mse = float(np.mean((pred - truth) ** 2))
    return {"mse": mse, "psnr": psnr(mse), "energy_distance": energy_distance(pred, truth, max_n)}


def fmt_num(v) -> str:
    """12 significant digits; the CSV files rely on this for byte stability."""
    return format(float(v), ".12g")


def pairs_csv(pairs: PairedSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = pairs.clean.shape[1]
    w.writerow(["idx", "role"] + [f"v{j}" for j in range(d)])
    for i in range(len(pairs)):
        w.writerow([i, "clean"] + [fmt_num(v) for v in pairs.clean[i]])
        w.writerow([i, "degraded"] + [fmt_num(v) for v in pairs.degraded[i]])
    return buf.getvalue()


def read_pairs_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["idx", "role"]:
        raise ConfigError("dataset CSV must start with 'idx,role'")
    clean, degraded = {}, {}
    for row in rows[1:]:
        target = clean if row[1] == "clean" else degraded if row[1] == "degraded" else None
        if target is None:
            raise ConfigError(f"unknown role {row[1]!r}")
        target[int(row[0])] = [float(v) for v in row[2:]]
    idx = sorted(clean)
    return np.array([clean[i] for i in idx]), np.array([degraded[i] for i in idx])
