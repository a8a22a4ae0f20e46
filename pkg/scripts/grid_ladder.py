"""Covering radius and build time of the standard SO(3) grid ladder.

Writes ladder.csv and ladder_timing.csv under the output directory.
"""
import argparse
import sys

from symmpose import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ladder")
    ap.add_argument("--probes", type=int, default=10_000)
    ap.add_argument("--max", type=int, default=480_000, help="largest grid size to include")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    return cli.main(["sample-so3", "--ladder", "--ladder-max", str(a.max), "--probes", str(a.probes),
                     "--seed", str(a.seed), "--out", a.out])


if __name__ == "__main__":
    sys.exit(main())
