"""One-step consistency restoration against the Euler ODE sampler at growing NFE.

Trains the default two-moons model on first use (about half a minute) and
caches it at ``--ckpt``.
"""

import argparse
import csv
import sys
import time

import numpy as np

from _common import eval_pairs, load_or_train
from ebridge.numcore import Rng
from ebridge.solver import consistency_sample, make_schedule, ode_sample
from ebridge.tasks import eval_metrics, fmt_num


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", default="moons_default.json")
    ap.add_argument("--t0", type=float, default=0.9)
    ap.add_argument("--consistency-nfe", default="1,2,5,10")
    ap.add_argument("--ode-steps", default="1,2,5,10,20,50")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    net = load_or_train(args.ckpt)
    pairs = eval_pairs()
    identity = float(np.mean((pairs.degraded - pairs.clean) ** 2))
    runs = [("consistency", int(k)) for k in args.consistency_nfe.split(",")]
    runs += [("ode", int(k)) for k in args.ode_steps.split(",")]

    sink = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["sampler", "nfe", "mse", "mse_over_identity", "psnr", "energy_distance", "wall_ms"])
    for sampler, nfe in runs:
        rng = Rng(args.seed, (3,))
        start = time.perf_counter()
        if sampler == "consistency":
            pred = consistency_sample(net, pairs.degraded, args.t0, make_schedule(args.t0, nfe), rng)
        else:
            pred = ode_sample(net, pairs.degraded, args.t0, nfe, rng)
        wall = 1000 * (time.perf_counter() - start)
        m = eval_metrics(pred, pairs.clean)
        w.writerow([sampler, nfe, fmt_num(m["mse"]), fmt_num(m["mse"] / identity), fmt_num(m["psnr"]),
                    fmt_num(m["energy_distance"]), fmt_num(wall)])
    if args.out:
        sink.close()


if __name__ == "__main__":
    main()
