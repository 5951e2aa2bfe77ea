"""Gas-leak localization environment: scenario geometry, source sampling,
agent kinematics, and observation generation.

Three prior-misalignment scenarios are supported at two spatial scales.  In
each, the filter's positional prior is the same box while the true source is
drawn from a region that the prior covers fully (``no_error``), partially
(``moderate``), or not at all (``severe``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .particles import PriorBox
from .plume import (
    ConfigurationError,
    Pose,
    SensorNoise,
    SourceParams,
    sample_measurement,
)

SCENARIO_NAMES = ("no_error", "moderate", "severe")
SCALES = ("small", "large")

# Non-positional source parameter ranges: release strength, wind speed,
# wind direction, diffusivity, effective lifetime.
Q_RANGE = (10.0, 3000.0)
U_RANGE = (0.0, 6.0)
PHI_RANGE = (0.0, 2.0 * math.pi)
D_RANGE = (1.0, 5.0)
TAU_RANGE = (0.5, 8.0)


class ProtocolError(RuntimeError):
    """An episode-level contract was violated (e.g. stepping past budget)."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle [x_lo, x_hi] x [y_lo, y_hi]."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self) -> None:
        if self.x_lo >= self.x_hi or self.y_lo >= self.y_hi:
            raise ConfigurationError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)

    def contains(self, x, y):
        return (x >= self.x_lo) & (x <= self.x_hi) & (y >= self.y_lo) & (y <= self.y_hi)

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        return (
            float(rng.uniform(self.x_lo, self.x_hi)),
            float(rng.uniform(self.y_lo, self.y_hi)),
        )

    def scaled(self, factor: float) -> "Box":
        return Box(
            self.x_lo * factor,
            self.x_hi * factor,
            self.y_lo * factor,
            self.y_hi * factor,
        )

    def intersects(self, other: "Box") -> bool:
        return not (
            self.x_hi <= other.x_lo
            or other.x_hi <= self.x_lo
            or self.y_hi <= other.y_lo
            or other.y_hi <= self.y_lo
        )


@dataclass(frozen=True)
class Scenario:
    """One benchmark cell: geometry, step budget, and success radius."""

    name: str
    scale: str
    domain: tuple[float, float]
    prior_box: Box
    true_region: tuple[Box, ...]
    start_box: Box
    step_budget: int
    success_radius: float


@dataclass(frozen=True)
class Observation:
    """Agent pose plus the scalar sensor voltage recorded there."""

    pose: Pose
    z: float


@dataclass
class EpisodeState:
    """Mutable per-episode state: hidden source, agent pose, accounting."""

    true_theta: SourceParams
    pose: Pose
    step: int = 0
    distance_traveled: float = 0.0


def make_scenario(name: str, scale: str = "small") -> Scenario:
    """Build one of the misalignment scenarios at the requested scale.

    Small scale: 30x30 domain, prior (0,20)^2, 100-step budget.  Large scale
    multiplies every positional quantity by 10 and stretches the budget to
    300 steps.
    """
    if name not in SCENARIO_NAMES:
        raise ConfigurationError(f"unknown scenario {name!r}; pick from {SCENARIO_NAMES}")
    if scale not in SCALES:
        raise ConfigurationError(f"unknown scale {scale!r}; pick from {SCALES}")

    prior = Box(0.0, 20.0, 0.0, 20.0)
    if name == "no_error":
        true_region = (Box(10.0, 20.0, 10.0, 20.0),)
    elif name == "moderate":
        true_region = (Box(10.0, 25.0, 10.0, 25.0),)
    else:
        true_region = (Box(15.0, 30.0, 20.0, 30.0), Box(20.0, 30.0, 15.0, 20.0))

    factor = 1.0 if scale == "small" else 10.0
    return Scenario(
        name=name,
        scale=scale,
        domain=(30.0 * factor, 30.0 * factor),
        prior_box=prior.scaled(factor),
        true_region=tuple(b.scaled(factor) for b in true_region),
        start_box=Box(0.0, 5.0, 0.0, 5.0).scaled(factor),
        step_budget=100 if scale == "small" else 300,
        success_radius=1.0 * factor,
    )


def param_prior(scenario: Scenario) -> PriorBox:
    """Filter prior: positional bounds from the scenario, the rest from the
    source parameter distributions."""
    pb = scenario.prior_box
    lower = np.array(
        [pb.x_lo, pb.y_lo, Q_RANGE[0], U_RANGE[0], PHI_RANGE[0], D_RANGE[0], TAU_RANGE[0]]
    )
    upper = np.array(
        [pb.x_hi, pb.y_hi, Q_RANGE[1], U_RANGE[1], PHI_RANGE[1], D_RANGE[1], TAU_RANGE[1]]
    )
    return PriorBox(lower=lower, upper=upper)


def sample_source(scenario: Scenario, rng: np.random.Generator) -> SourceParams:
    """Draw the hidden source: position area-weighted over the true region
    boxes, other parameters from their marginal distributions."""
    areas = np.array([b.area for b in scenario.true_region])
    box = scenario.true_region[int(rng.choice(len(areas), p=areas / areas.sum()))]
    x, y = box.sample(rng)
    return SourceParams(
        x_s=x,
        y_s=y,
        q_s=float(rng.uniform(*Q_RANGE)),
        u_s=float(rng.uniform(*U_RANGE)),
        phi_s=float(rng.uniform(*PHI_RANGE)),
        d_s=float(rng.uniform(*D_RANGE)),
        tau_s=float(rng.uniform(*TAU_RANGE)),
    )


def sample_start(scenario: Scenario, rng: np.random.Generator) -> Pose:
    x, y = scenario.start_box.sample(rng)
    return Pose(x, y)


def step_agent(
    state: EpisodeState, displacement: tuple[float, float], scenario: Scenario
) -> EpisodeState:
    """Apply a unit move, clamp to the domain, and account realized distance."""
    if state.step >= scenario.step_budget:
        raise ProtocolError(
            f"step_agent called past the budget of {scenario.step_budget}"
        )
    w, h = scenario.domain
    nx = min(max(state.pose.x + displacement[0], 0.0), w)
    ny = min(max(state.pose.y + displacement[1], 0.0), h)
    moved = math.hypot(nx - state.pose.x, ny - state.pose.y)
    return replace(
        state,
        pose=Pose(nx, ny),
        step=state.step + 1,
        distance_traveled=state.distance_traveled + moved,
    )


def observe(
    state: EpisodeState, noise: SensorNoise, rng: np.random.Generator
) -> Observation:
    """Record one sensor voltage at the agent's pose from the hidden source."""
    z = sample_measurement(state.pose, state.true_theta, noise, rng)
    return Observation(pose=state.pose, z=z)
