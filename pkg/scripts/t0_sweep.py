"""Restoration quality and start-point distance over a grid of horizons T0.

Thin wrapper around ``ebridge sweep-t0`` that trains the default model first
if no checkpoint exists.
"""

import argparse
import sys

from _common import load_or_train
from ebridge.cli import main as cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", default="moons_default.json")
    ap.add_argument("--grid", default="0.1,0.3,0.5,0.7,0.9,1.0")
    ap.add_argument("--nfe-list", default="1,5,10")
    ap.add_argument("--sampler", default="consistency", choices=("consistency", "ode"))
    ap.add_argument("--out", default="t0_sweep.csv")
    args = ap.parse_args(argv)
    load_or_train(args.ckpt)
    code = cli(["sweep-t0", args.ckpt, "moons2d", "--grid", args.grid, "--nfe-list", args.nfe_list,
                "--sampler", args.sampler, "--timing", "--out", args.out])
    if code == 0:
        sys.stdout.write(open(args.out).read())
    return code


if __name__ == "__main__":
    sys.exit(main())
