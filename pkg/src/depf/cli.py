"""Command-line interface: single runs, the benchmark grid, ablation sweeps,
and the support lock-in check.

Set ``DEPF_LOG=off|info|debug`` to control log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .environment import SCALES, SCENARIO_NAMES, make_scenario
from .episode import METHODS, run_episode
from .harness import (
    ExperimentConfig,
    apply_overrides,
    compute_metrics,
    fmt6,
    load_config,
    run_batch,
    write_episodes_csv,
    write_summary_json,
)
from .planners import PLANNERS
from .plume import ConfigurationError

log = logging.getLogger("depf")

ABLATE_PARAMS = (
    "exploratory_ratio",
    "delta_margin",
    "bandwidth_a",
    "ridge_lambda",
    "beta",
)


def _configure_logging() -> None:
    level_name = os.environ.get("DEPF_LOG", "off").lower()
    levels = {"off": logging.CRITICAL + 10, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level_name, logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field, dotted paths reach nested sections",
    )
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--episodes", type=int, help="episodes per cell")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--parallel", type=int, help="worker processes (default: cores)")
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--planner", choices=tuple(PLANNERS))
    parser.add_argument("--scenario", choices=SCENARIO_NAMES)
    parser.add_argument("--scale", choices=SCALES)


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    direct = {
        "base_seed": args.seed,
        "episodes": args.episodes,
        "parallel": args.parallel,
        "method": args.method,
        "planner": args.planner,
        "scenario": args.scenario,
        "scale": args.scale,
    }
    updates = {k: v for k, v in direct.items() if v is not None}
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    return cfg


def _print_summary(tag: str, summary) -> None:
    d = summary.to_dict()
    print(
        f"{tag}: oce={fmt6(d['oce'])}±{fmt6(d['oce_std'])} "
        f"ade={d['ade'] if isinstance(d['ade'], str) else fmt6(d['ade'])} "
        f"lps={fmt6(d['lps'])}±{fmt6(d['lps_std'])} "
        f"timeout_rate={fmt6(d['timeout_rate'])}"
    )


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    summary, results = run_batch(cfg)
    write_episodes_csv(args.out / "episodes.csv", results)
    write_summary_json(args.out / "summary.json", cfg, summary)
    _print_summary(f"{cfg.method}/{cfg.scenario}/{cfg.scale}", summary)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    base = _build_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    scales = [args.scale] if args.scale else list(SCALES)
    methods = [args.method] if args.method else list(METHODS)
    scenarios = [args.scenario] if args.scenario else list(SCENARIO_NAMES)
    for scale in scales:
        for scenario in scenarios:
            for method in methods:
                cfg = dataclasses.replace(
                    base, method=method, scenario=scenario, scale=scale
                )
                cell = f"{method}_{scenario}_{scale}"
                cell_dir = args.out / cell
                cell_dir.mkdir(parents=True, exist_ok=True)
                summary, results = run_batch(cfg)
                write_episodes_csv(cell_dir / "episodes.csv", results)
                write_summary_json(cell_dir / "summary.json", cfg, summary)
                _print_summary(cell, summary)
                d = summary.to_dict()
                rows.append(
                    [method, scenario, scale]
                    + [
                        d[k] if isinstance(d[k], str) else fmt6(d[k])
                        for k in (
                            "oce",
                            "oce_std",
                            "ade",
                            "ade_std",
                            "rev",
                            "rev_std",
                            "lps",
                            "lps_std",
                            "timeout_rate",
                        )
                    ]
                )
    with open(args.out / "table1.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "method",
                "scenario",
                "scale",
                "oce",
                "oce_std",
                "ade",
                "ade_std",
                "rev",
                "rev_std",
                "lps",
                "lps_std",
                "timeout_rate",
            ]
        )
        writer.writerows(rows)
    return 0


def _ablate_override(cfg: ExperimentConfig, param: str, value: float) -> ExperimentConfig:
    if param == "beta":
        depf = dataclasses.replace(
            cfg.depf, reg_mode="additive", beta_min=value, beta_max=value
        )
    else:
        depf = dataclasses.replace(cfg.depf, **{param: value})
    return dataclasses.replace(cfg, depf=depf)


def _cmd_ablate(args: argparse.Namespace) -> int:
    base = _build_config(args)
    if base.method != "depf":
        base = dataclasses.replace(base, method="depf")
    args.out.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v in args.values.split(",")]
    rows = []
    for value in values:
        cfg = _ablate_override(base, args.param, value)
        summary, results = run_batch(cfg)
        agdc_steps = [r.steps_used for r in results if r.termination == "agdc"]
        mean_steps = sum(agdc_steps) / len(agdc_steps) if agdc_steps else float("nan")
        d = summary.to_dict()
        rows.append(
            [
                fmt6(value),
                fmt6(d["oce"]),
                d["ade"] if isinstance(d["ade"], str) else fmt6(d["ade"]),
                fmt6(d["lps"]),
                fmt6(mean_steps),
                fmt6(d["timeout_rate"]),
            ]
        )
        print(
            f"{args.param}={fmt6(value)}: oce={fmt6(d['oce'])} lps={fmt6(d['lps'])} "
            f"steps_to_stop={fmt6(mean_steps)}"
        )
    path = args.out / f"ablate_{args.param}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.param, "oce", "ade", "lps", "steps_to_stop", "timeout_rate"])
        writer.writerows(rows)
    return 0


def spsi_check(cfg: ExperimentConfig) -> tuple[bool, float, float]:
    """Run bootstrap episodes and verify positional support never leaves the
    prior box.  Returns (locked_in, max excursion, success rate)."""
    scenario = make_scenario(cfg.scenario, cfg.scale)
    box = scenario.prior_box
    excursion = 0.0

    def on_step(_k, ps, _state):
        nonlocal excursion
        x, y = ps.particles[:, 0], ps.particles[:, 1]
        dx = np.maximum(box.x_lo - x, x - box.x_hi)
        dy = np.maximum(box.y_lo - y, y - box.y_hi)
        excursion = max(excursion, float(np.maximum(dx, dy).max()))

    results = []
    for i in range(cfg.episodes):
        results.append(
            run_episode(
                scenario=scenario,
                method="bootstrap",
                planner=cfg.planner,
                n_particles=cfg.n_particles,
                seed=cfg.base_seed + i,
                noise=cfg.noise,
                depf_cfg=cfg.depf,
                perturb_cfg=cfg.perturb,
                lookahead_cfg=cfg.lookahead,
                on_step=on_step,
            )
        )
    summary = compute_metrics(results)
    return excursion <= 0.0, excursion, summary.oce


def _cmd_spsi_check(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    locked, excursion, oce = spsi_check(cfg)
    verdict = "LOCKED-IN" if locked else "ESCAPED"
    print(
        f"spsi-check [{cfg.scenario}/{cfg.scale}, {cfg.episodes} episodes]: "
        f"{verdict} (max excursion {fmt6(excursion)}), oce={fmt6(oce)}"
    )
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "spsi_check.json", "w") as fh:
        json.dump(
            {"locked_in": locked, "max_excursion": excursion, "oce": oce}, fh, indent=2
        )
        fh.write("\n")
    return 0 if locked else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depf",
        description="Source-term estimation benchmark: diffusion-enhanced "
        "particle filtering vs classical SMC baselines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment cell")
    _add_common(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_bench = sub.add_parser("bench", help="run the method x scenario x scale grid")
    _add_common(p_bench)
    p_bench.set_defaults(fn=_cmd_bench)

    p_abl = sub.add_parser("ablate", help="sweep one diffusion-filter knob")
    _add_common(p_abl)
    p_abl.add_argument("--param", choices=ABLATE_PARAMS, required=True)
    p_abl.add_argument(
        "--values", required=True, help="comma-separated values, e.g. 0.01,0.05,0.2"
    )
    p_abl.set_defaults(fn=_cmd_ablate)

    p_spsi = sub.add_parser(
        "spsi-check", help="verify bootstrap support lock-in inside the prior box"
    )
    _add_common(p_spsi)
    p_spsi.set_defaults(fn=_cmd_spsi_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
