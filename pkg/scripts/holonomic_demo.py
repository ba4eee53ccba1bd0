"""Holonomic vehicle with a bearing sensor: LQR versus augmented feedback.

Every CSV lands in one output directory, one set per corner start, next to
a short optimization log.
"""

import argparse
import json
import os

from obsyn.cli import write_summary
from obsyn.demos import run_holonomic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/holonomic")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=25)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    summary = run_holonomic(args.out, seed=args.seed, optimize_iters=args.iters)
    path = write_summary(summary, args.out)
    print(json.dumps({k: summary[k] for k in ("seed", "elapsed_seconds")}), "->", path)


if __name__ == "__main__":
    main()
