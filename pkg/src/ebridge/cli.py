"""Command-line harness: ``python -m ebridge <command>``.

Commands: ``train``, ``restore``, ``verify``, ``sweep-t0``, ``gen-data``.
Exit codes: 0 success, 1 verification failure, 2 configuration or input
error, 3 numeric failure. ``EBRIDGE_THREADS`` caps BLAS threads (default 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, EBridgeError, InputError, NumericError
from .numcore import Rng, atomic_write_text, load_checkpoint, save_checkpoint
from .solver import NFECounter, consistency_sample, make_schedule, ode_sample
from .tasks import TaskSpec, eval_metrics, fmt_num, gen_pairs, pairs_csv
from .trajectory import start_point
from .training import ModelConfig, TrainConfig, train
from .verify import run_verification

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
SAMPLERS = ("consistency", "ode")


@dataclass(frozen=True)
class RestoreConfig:
    T0: float = 0.9
    nfe: int = 1
    sampler: str = "consistency"
    schedule: str = "uniform"
    seed: int = 0
    eval_seed: int = 1
    n_samples: int = 2000

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if not 0 < self.T0 <= 1:
            raise ConfigError("restore T0 must lie in (0, 1]")
        if self.nfe < 1 or self.n_samples < 1:
            raise ConfigError("nfe and n_samples must be >= 1")


@dataclass(frozen=True)
class SweepConfig:
    grid: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9)
    nfe_list: tuple[int, ...] = (1, 5, 10)
    sampler: str = "consistency"

    def __post_init__(self):
        if not self.grid or any(not 0 < g <= 1 for g in self.grid):
            raise ConfigError("sweep grid values must lie in (0, 1]")
        if not self.nfe_list or any(k < 1 for k in self.nfe_list):
            raise ConfigError("nfe values must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}")


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    restore: RestoreConfig = field(default_factory=RestoreConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)


_SECTIONS = {"task": TaskSpec, "train": TrainConfig, "model": ModelConfig,
             "restore": RestoreConfig, "sweep": SweepConfig}
_TUPLE_KEYS = {"T0_range", "hidden", "grid", "nfe_list"}


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    kwargs = {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in {name!r}: {exc}") from exc


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"schema_version"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    return RunConfig(**{k: _section(cls, doc.get(k, {}), k) for k, cls in _SECTIONS.items()})


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"schema_version": SCHEMA_VERSION}
    for name in _SECTIONS:
        sec = asdict(getattr(cfg, name))
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
    return out


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _apply_overrides(doc: dict, overrides) -> dict:
    """``section.key=value`` pairs; ``value`` is parsed as JSON, else taken as a string."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override {item!r} is not section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        doc.setdefault(section, {})[name] = value
    return doc


def load_config(path=None, overrides=None) -> RunConfig:
    doc = _read_json(path) if path else {"schema_version": SCHEMA_VERSION}
    return parse_config(_apply_overrides(doc, overrides))


def _task_from_arg(task: str, base: TaskSpec) -> TaskSpec:
    """A task kind name, or a path to a run config whose ``task`` section is used."""
    if task in ("moons2d", "rings2d"):
        return replace(base, kind=task, dim=2)
    if task == "tinyimage":
        if base.kind == "tinyimage":
            return base
        return TaskSpec("tinyimage", base.n_samples, 64, "blur_downsample",
                        {"blur_width": 3, "downsample": 2}, base.seed)
    if Path(task).is_file():
        return load_config(task).task
    raise ConfigError(f"task {task!r} is neither a task kind nor a config file")


# -- commands ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    pairs = gen_pairs(cfg.task)
    sink = open(args.log, "w") if args.log else None

    def log(rec):
        if not args.timing:
            rec = {k: v for k, v in rec.items() if k != "wall_ms"}
        line = json.dumps(rec)
        print(line, file=sink or sys.stdout, flush=True)

    try:
        result = train(cfg.train, pairs, cfg.model, log=log)
    finally:
        if sink:
            sink.close()
    extra = {"T0_range": list(cfg.train.T0_range), "config": config_to_dict(cfg)}
    save_checkpoint(args.out, result.net, ema_decay=cfg.train.ema_decay,
                    trained_steps=result.trained_steps, seed=cfg.train.seed, extra=extra)
    print(f"checkpoint written to {args.out}", file=sys.stderr)
    return EXIT_OK


def _load_for_eval(args):
    cfg = load_config(args.config, args.set)
    net, doc = load_checkpoint(args.ckpt)
    spec = _task_from_arg(args.task, cfg.task)
    eval_spec = replace(spec, seed=cfg.restore.eval_seed, n_samples=cfg.restore.n_samples)
    if net.state_dim != eval_spec.dim:
        raise ConfigError(f"checkpoint state dim {net.state_dim} does not match task dim {eval_spec.dim}")
    return cfg, net, doc, gen_pairs(eval_spec)


def _warn_range(doc, T0):
    lo, hi = doc.get("T0_range", (0.0, 1.0))
    if not lo <= T0 <= hi:
        print(f"warning: T0={T0:g} lies outside the trained range [{lo:g}, {hi:g}]", file=sys.stderr)


def restore(net, y, T0, nfe, sampler, seed, schedule="uniform"):
    """Run one sampler; returns ``(prediction, network evaluations per sample)``."""
    counter = NFECounter(net)
    rng = Rng(seed, (3,))
    if sampler == "consistency":
        pred = consistency_sample(counter, y, T0, make_schedule(T0, nfe, schedule), rng)
    else:
        pred = ode_sample(counter, y, T0, nfe, rng)
    return pred, counter.calls


def cmd_restore(args) -> int:
    cfg, net, doc, pairs = _load_for_eval(args)
    rc = cfg.restore
    T0 = rc.T0 if args.t0 is None else args.t0
    nfe = rc.nfe if args.nfe is None else args.nfe
    sampler = args.sampler or rc.sampler
    seed = rc.seed if args.seed is None else args.seed
    rc = RestoreConfig(T0, nfe, sampler, rc.schedule, seed, rc.eval_seed, rc.n_samples)
    _warn_range(doc, T0)
    pred, calls = restore(net, pairs.degraded, T0, nfe, sampler, seed, rc.schedule)
    if calls != nfe:
        raise NumericError(f"sampler used {calls} evaluations, expected {nfe}")
    if not np.all(np.isfinite(pred)):
        raise NumericError("restoration produced non-finite values")
    metrics = eval_metrics(pred, pairs.clean)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = pred.shape[1]
    w.writerow(["idx"] + [f"pred{j}" for j in range(d)] + [f"clean{j}" for j in range(d)] + ["sq_err"])
    for i in range(pred.shape[0]):
        err = float(np.sum((pred[i] - pairs.clean[i]) ** 2))
        w.writerow([i] + [fmt_num(v) for v in pred[i]] + [fmt_num(v) for v in pairs.clean[i]] + [fmt_num(err)])
    if args.out:
        atomic_write_text(args.out, buf.getvalue())
    identity = eval_metrics(pairs.degraded, pairs.clean)["mse"]
    summary = {"sampler": sampler, "T0": T0, "nfe": nfe, "nfe_per_sample": calls, "seed": seed,
               "mse": metrics["mse"], "psnr": metrics["psnr"], "energy_distance": metrics["energy_distance"],
               "identity_mse": identity}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_verification(perturb_coeffs=args.perturb_coeffs)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    failed = [p for p in report["propositions"] if not p["passed"]]
    for p in failed:
        print(f"FAILED {p['name']}: value={p['value']!r} reference={p['reference']!r} "
              f"tolerance={p['tolerance']!r} ({p['relation']})", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_VERIFY


SWEEP_HEADER = ["T0", "nfe", "mse", "psnr", "energy_distance", "start_dist", "wall_ms", "seed"]


def _float_list(text, cast=float):
    try:
        return tuple(cast(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}") from exc


def cmd_sweep_t0(args) -> int:
    cfg, net, doc, pairs = _load_for_eval(args)
    sweep = cfg.sweep
    grid = _float_list(args.grid) if args.grid else sweep.grid
    nfes = _float_list(args.nfe_list, int) if args.nfe_list else sweep.nfe_list
    sweep = SweepConfig(grid, nfes, args.sampler or sweep.sampler)
    seed = cfg.restore.seed if args.seed is None else args.seed
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for T0 in sweep.grid:
        _warn_range(doc, T0)
        # same noise stream as the sampler, so this is the realized start
        start, _ = start_point(pairs.degraded, T0, Rng(seed, (3,)))
        start_dist = float(np.mean(np.linalg.norm(start - pairs.degraded, axis=1)))
        for nfe in sweep.nfe_list:
            t0 = time.perf_counter()
            pred, calls = restore(net, pairs.degraded, T0, nfe, sweep.sampler, seed, cfg.restore.schedule)
            wall = 1000.0 * (time.perf_counter() - t0)
            if calls != nfe:
                raise NumericError(f"sampler used {calls} evaluations, expected {nfe}")
            m = eval_metrics(pred, pairs.clean)
            w.writerow([fmt_num(T0), nfe, fmt_num(m["mse"]), fmt_num(m["psnr"]), fmt_num(m["energy_distance"]),
                        fmt_num(start_dist), fmt_num(wall) if args.timing else "", seed])
    atomic_write_text(args.out, buf.getvalue())
    print(f"{len(sweep.grid) * len(sweep.nfe_list)} rows written to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.set)
    spec = _task_from_arg(args.task, cfg.task)
    if args.n is not None:
        spec = replace(spec, n_samples=args.n)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    atomic_write_text(args.out, pairs_csv(gen_pairs(spec)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebridge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run config JSON (schema_version 1)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config key; VALUE is parsed as JSON")

    sp = sub.add_parser("train", help="pretrain and fine-tune a denoiser")
    common(sp)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", help="write JSON-lines training log here instead of stdout")
    sp.add_argument("--timing", action="store_true", help="include wall_ms in log records")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("restore", help="restore a held-out set with a trained checkpoint")
    common(sp)
    sp.add_argument("ckpt")
    sp.add_argument("task", help="task kind (moons2d, rings2d, tinyimage) or a config file")
    sp.add_argument("--nfe", type=int)
    sp.add_argument("--t0", type=float)
    sp.add_argument("--sampler", choices=SAMPLERS)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="per-sample CSV")
    sp.set_defaults(func=cmd_restore)

    sp = sub.add_parser("verify", help="run the oracle verification suite")
    sp.add_argument("--out", help="report JSON path (stdout if omitted)")
    sp.add_argument("--perturb-coeffs", type=float, default=0.0, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("sweep-t0", help="restoration metrics over a T0 x NFE grid")
    common(sp)
    sp.add_argument("ckpt")
    sp.add_argument("task")
    sp.add_argument("--grid", help='comma-separated T0 values, e.g. "0.3,0.5,0.7,0.9"')
    sp.add_argument("--nfe-list", help='comma-separated NFE values, e.g. "1,5,10"')
    sp.add_argument("--sampler", choices=SAMPLERS)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep_t0)

    sp = sub.add_parser("gen-data", help="dump a paired dataset as CSV")
    common(sp)
    sp.add_argument("task")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)
    return p


def _threads() -> int:
    raw = os.environ.get("EBRIDGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"EBRIDGE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("EBRIDGE_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EBridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
