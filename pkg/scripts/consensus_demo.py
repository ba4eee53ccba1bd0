"""Three-agent consensus network seen through relative bearings.

Starting on the agreement eigenvector of the LQR closed loop the bearings
never change, so the run carries no information about scale.
"""

import argparse
import os

from obsyn.cli import write_summary
from obsyn.demos import run_consensus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/consensus")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    write_summary(run_consensus(args.out), args.out)


if __name__ == "__main__":
    main()
