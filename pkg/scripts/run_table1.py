#!/usr/bin/env python3
"""Run the full method x scenario benchmark grid at desk scale.

Writes per-cell episode CSVs, summaries, and a combined table under --out.
Equivalent to `depf bench`; kept as a script so the grid is easy to tweak.
"""

import argparse
import sys

from depf.cli import main as cli_main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="out/table1")
    p.add_argument("--scale", default="small", choices=["small", "large"])
    p.add_argument("--parallel", type=int, default=None)
    return p.parse_args()


def main():
    args = parse_args()
    argv = [
        "bench",
        "--episodes", str(args.episodes),
        "--seed", str(args.seed),
        "--out", args.out,
        "--scale", args.scale,
    ]
    if args.parallel:
        argv += ["--parallel", str(args.parallel)]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
