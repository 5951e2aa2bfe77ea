#!/usr/bin/env python3
"""Sensitivity sweeps for the diffusion filter under the severe scenario.

Runs the knobs studied in the sensitivity analysis (support margin, kernel
bandwidth, covariance ridge, smoothing strength, exploratory ratio) and
writes one CSV per knob under --out.
"""

import argparse
import sys

from depf.cli import main as cli_main

SWEEPS = {
    "exploratory_ratio": "0.01,0.05,0.2",
    "bandwidth_a": "0.1,0.5,2.0",
    "delta_margin": "0.1,0.3,0.5",
    "ridge_lambda": "1e-3,1e-2,1e-1",
    "beta": "0.1,0.3,0.5",
}


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="out/ablations")
    p.add_argument("--scenario", default="severe")
    p.add_argument(
        "--params", default=",".join(SWEEPS), help="comma-separated knob names"
    )
    return p.parse_args()


def main():
    args = parse_args()
    for param in args.params.split(","):
        param = param.strip()
        if param not in SWEEPS:
            print(f"unknown knob {param!r}; choices: {sorted(SWEEPS)}", file=sys.stderr)
            return 2
        code = cli_main(
            [
                "ablate",
                "--param", param,
                "--values", SWEEPS[param],
                "--episodes", str(args.episodes),
                "--seed", str(args.seed),
                "--scenario", args.scenario,
                "--out", args.out,
            ]
        )
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
