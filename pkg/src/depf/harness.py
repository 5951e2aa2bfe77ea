"""Seeded batch experiment runner, metric aggregation, and persistence.

Episodes inside a batch run with seeds ``base_seed + i`` and are
embarrassingly parallel; aggregation is a deterministic fold over episode
index, so serial and parallel executions produce identical results.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .diffusion import DepfConfig
from .environment import SCALES, SCENARIO_NAMES, make_scenario
from .episode import (
    METHODS,
    TERMINATION_TIMEOUT,
    EpisodeResult,
    run_episode,
)
from .perturb import PerturbConfig
from .planners import PLANNERS, LookaheadConfig
from .plume import ConfigurationError, SensorNoise

# Sentinel used for success-conditioned metrics when nothing succeeded,
# mirroring the benchmark-table convention.
TIMEOUT_SENTINEL = "timeout"

EPISODE_CSV_HEADER = (
    "seed",
    "success",
    "steps",
    "distance",
    "wall_seconds",
    "lps",
    "termination",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark cell needs, JSON-serializable."""

    method: str = "depf"
    planner: str = "info_gain"
    scenario: str = "severe"
    scale: str = "small"
    n_particles: int = 3000
    episodes: int = 200
    base_seed: int = 42
    parallel: int | None = None
    noise: SensorNoise = field(default_factory=SensorNoise)
    depf: DepfConfig = field(default_factory=DepfConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    lookahead: LookaheadConfig = field(default_factory=LookaheadConfig)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}")
        if self.planner not in PLANNERS:
            raise ConfigurationError(f"planner must be one of {tuple(PLANNERS)}")
        if self.scenario not in SCENARIO_NAMES:
            raise ConfigurationError(f"scenario must be one of {SCENARIO_NAMES}")
        if self.scale not in SCALES:
            raise ConfigurationError(f"scale must be one of {SCALES}")
        if self.episodes < 1:
            raise ConfigurationError("episodes must be at least 1")
        if self.n_particles < 100:
            raise ConfigurationError("n_particles must be at least 100")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        for key, sub in (
            ("noise", SensorNoise),
            ("depf", DepfConfig),
            ("perturb", PerturbConfig),
            ("lookahead", LookaheadConfig),
        ):
            if key in data and isinstance(data[key], dict):
                data[key] = sub(**_tupled(data[key]))
        return cls(**data)


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass(frozen=True)
class MetricsSummary:
    """Benchmark metrics for one cell.

    Success-conditioned means (path length, wall time) are ``None`` when no
    episode succeeded and serialize as the timeout sentinel.
    """

    episodes: int
    oce: float
    oce_std: float
    ade: float | None
    ade_std: float | None
    rev: float | None
    rev_std: float | None
    lps: float
    lps_std: float
    timeout_rate: float

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("ade", "ade_std", "rev", "rev_std"):
            if out[key] is None:
                out[key] = TIMEOUT_SENTINEL
        return out


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def compute_metrics(results: Sequence[EpisodeResult]) -> MetricsSummary:
    """Aggregate per-episode results into the four benchmark metrics.

    Success rate and localization error average over all episodes; path
    length and wall time average over successful episodes only.
    """
    if not results:
        raise ConfigurationError("compute_metrics needs at least one episode result")
    successes = [1.0 if r.success else 0.0 for r in results]
    oce, oce_std = _mean_std(successes)
    lps, lps_std = _mean_std([r.final_lps for r in results])
    won = [r for r in results if r.success]
    if won:
        ade, ade_std = _mean_std([r.distance for r in won])
        rev, rev_std = _mean_std([r.wall_seconds for r in won])
    else:
        ade = ade_std = rev = rev_std = None
    timeout_rate = sum(r.termination == TERMINATION_TIMEOUT for r in results) / len(
        results
    )
    return MetricsSummary(
        episodes=len(results),
        oce=oce,
        oce_std=oce_std,
        ade=ade,
        ade_std=ade_std,
        rev=rev,
        rev_std=rev_std,
        lps=lps,
        lps_std=lps_std,
        timeout_rate=timeout_rate,
    )


def _run_one(cfg: ExperimentConfig, seed: int) -> EpisodeResult:
    scenario = make_scenario(cfg.scenario, cfg.scale)
    return run_episode(
        scenario=scenario,
        method=cfg.method,
        planner=cfg.planner,
        n_particles=cfg.n_particles,
        seed=seed,
        noise=cfg.noise,
        depf_cfg=cfg.depf,
        perturb_cfg=cfg.perturb,
        lookahead_cfg=cfg.lookahead,
    )


def run_batch(
    cfg: ExperimentConfig,
    on_result: Callable[[EpisodeResult], None] | None = None,
) -> tuple[MetricsSummary, list[EpisodeResult]]:
    """Run ``cfg.episodes`` seeded episodes and aggregate their metrics."""
    seeds = [cfg.base_seed + i for i in range(cfg.episodes)]
    workers = cfg.parallel if cfg.parallel else (os.cpu_count() or 1)
    if workers <= 1 or cfg.episodes == 1:
        results = [_run_one(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [cfg] * len(seeds), seeds, chunksize=1))
    if on_result is not None:
        for r in results:
            on_result(r)
    return compute_metrics(results), results


def fmt6(value: float) -> str:
    """Serialize a float with six significant digits."""
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return f"{value:.6g}"


def write_episodes_csv(path: Path, results: Sequence[EpisodeResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODE_CSV_HEADER)
        for r in results:
            writer.writerow(
                [
                    r.seed,
                    int(r.success),
                    r.steps_used,
                    fmt6(r.distance),
                    fmt6(r.wall_seconds),
                    fmt6(r.final_lps),
                    r.termination,
                ]
            )


def _round6(obj):
    if isinstance(obj, float):
        return float(fmt6(obj))
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    return obj


def write_summary_json(
    path: Path, cfg: ExperimentConfig, summary: MetricsSummary
) -> None:
    payload = {"config": cfg.to_dict(), "metrics": _round6(summary.to_dict())}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: Path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def apply_overrides(cfg: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    """Apply ``key=value`` overrides with dotted paths into nested configs."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        target = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigurationError(f"unknown config section {part!r} in {key!r}")
            target = target[part]
        leaf = parts[-1]
        if leaf not in target:
            raise ConfigurationError(f"unknown config key {key!r}")
        target[leaf] = json.loads(raw) if _looks_like_json(raw) else raw
    return ExperimentConfig.from_dict(data)


def _looks_like_json(raw: str) -> bool:
    try:
        json.loads(raw)
    except json.JSONDecodeError:
        return False
    return True
