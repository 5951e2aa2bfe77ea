"""Action selection over the particle belief.

All planners share one Monte Carlo look-ahead engine: for a candidate move,
sample source hypotheses from the belief, simulate the reading the sensor
would return after the move, push each simulated reading through the same
filter update the live episode uses, and score the hypothetical posteriors.

Scoring rules:

- greedy information gain: expected KL divergence between moment-matched
  Gaussians of the hypothetical and current beliefs (maximized);
- variance-minimizing search: expected trace of the positional posterior
  covariance (minimized);
- predictive-entropy search: expected weight entropy of the hypothetical
  posterior (maximized);
- dual-control: squared distance from the moved pose to the expected
  positional mean plus a weighted positional covariance trace (minimized).

Episodes terminate autonomously when the norm of the belief's standard-
deviation vector falls below a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .environment import Scenario
from .particles import ParticleSet, mean_cov, resample_systematic, weight_entropy
from .plume import ConfigurationError, Pose, SensorNoise, expected_reading_many

_SQ = math.sqrt(0.5)

# 8-connected unit moves, N first then clockwise; diagonals normalized so
# every move has length 1.
ACTIONS: tuple[tuple[float, float], ...] = (
    (0.0, 1.0),    # N
    (_SQ, _SQ),    # NE
    (1.0, 0.0),    # E
    (_SQ, -_SQ),   # SE
    (0.0, -1.0),   # S
    (-_SQ, -_SQ),  # SW
    (-1.0, 0.0),   # W
    (-_SQ, _SQ),   # NW
)
ACTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")

UpdateFn = Callable[[ParticleSet, float, Pose, np.random.Generator], ParticleSet]


@dataclass(frozen=True)
class LookaheadConfig:
    """Planner and stopping knobs shared by all action-selection rules.

    ``agdc_dims`` selects which belief dimensions enter the stopping norm;
    the default uses the positional pair, so the threshold is in domain
    units and a stop implies positional std at most ``agdc_zeta`` per axis.
    """

    mc_samples: int = 12
    step_penalty: float = 0.0
    time_penalty: float = 0.0
    dcee_lambda: float = 1.0
    agdc_zeta: float = 0.3
    lps_gate: float | None = None
    agdc_dims: tuple[int, ...] | None = (0, 1)
    summary_ridge: float = 1e-2
    lookahead_particles: int | None = None

    def __post_init__(self) -> None:
        if self.mc_samples < 1:
            raise ConfigurationError("mc_samples must be at least 1")
        if self.agdc_zeta < 0:
            raise ConfigurationError("agdc_zeta must be non-negative")
        if self.step_penalty < 0 or self.time_penalty < 0:
            raise ConfigurationError("penalties must be non-negative")
        if self.lookahead_particles is not None and self.lookahead_particles < 1:
            raise ConfigurationError("lookahead_particles must be positive or None")


@dataclass(frozen=True)
class BeliefSummary:
    """Moment summary of a belief: weighted mean, ridge-stabilized
    covariance, and the norm of the full standard-deviation vector."""

    mean: np.ndarray
    cov: np.ndarray
    std_norm: float


@dataclass(frozen=True)
class LookaheadModel:
    """Environment handles the look-ahead engine needs: clamped kinematics,
    the sensor noise model, and the live filter update.

    ``scoring_update``, when set, replaces the full update inside action
    scoring; planners fall back to ``update``.  ``batch_scorer`` is the
    vectorized equivalent used by the planning loop when present: a pair of
    (injection-plan factory, batched summary evaluator).
    """

    scenario: Scenario
    noise: SensorNoise
    update: UpdateFn
    scoring_update: UpdateFn | None = None
    batch_scorer: tuple | None = None


def belief_summary(ps: ParticleSet, ridge: float = 1e-2) -> BeliefSummary:
    mean, cov = mean_cov(ps, ridge=ridge)
    std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return BeliefSummary(mean=mean, cov=cov, std_norm=float(np.linalg.norm(std)))


def kl_gaussian(b_from: BeliefSummary, b_to: BeliefSummary) -> float:
    """Closed-form KL divergence between the moment-matched Gaussians."""
    k = b_from.mean.shape[0]
    diff = b_to.mean - b_from.mean
    try:
        chol, lower = cho_factor(b_to.cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"target covariance not positive definite: {exc}") from exc
    solved_cov = cho_solve((chol, lower), b_from.cov)
    solved_diff = cho_solve((chol, lower), diff)
    sign_f, logdet_f = np.linalg.slogdet(b_from.cov)
    if sign_f <= 0:
        raise RuntimeError("source covariance not positive definite")
    logdet_t = 2.0 * np.sum(np.log(np.diag(chol)))
    kl = 0.5 * (
        np.trace(solved_cov) + diff @ solved_diff - k + logdet_t - logdet_f
    )
    return float(max(kl, 0.0))


def next_pose(pose: Pose, action: int, scenario: Scenario) -> Pose:
    """Pose after one clamped unit move."""
    dx, dy = ACTIONS[action]
    w, h = scenario.domain
    return Pose(min(max(pose.x + dx, 0.0), w), min(max(pose.y + dy, 0.0), h))


def candidate_actions(
    pose: Pose, scenario: Scenario, action_set: Sequence[int] | None = None
) -> list[int]:
    """Actions with nonzero displacement after domain clamping, fixed order."""
    idxs = range(len(ACTIONS)) if action_set is None else action_set
    keep = []
    for a in idxs:
        p1 = next_pose(pose, a, scenario)
        if math.hypot(p1.x - pose.x, p1.y - pose.y) > 1e-12:
            keep.append(a)
    return keep or [next(iter(idxs))]


def lookahead_belief(
    ps: ParticleSet,
    action: int,
    pose: Pose,
    model: LookaheadModel,
    m: int,
    rng: np.random.Generator,
) -> list[ParticleSet]:
    """M hypothetical posteriors for one move.

    Each draws a source hypothesis from the belief, simulates the reading at
    the moved pose, and applies the live filter update to a copy; the input
    set is never mutated.
    """
    pose1 = next_pose(pose, action, model.scenario)
    out = []
    for child in rng.spawn(m):
        out.append(_one_lookahead(ps, pose1, model, child))
    return out


def _one_lookahead(
    ps: ParticleSet, pose1: Pose, model: LookaheadModel, rng: np.random.Generator
) -> ParticleSet:
    row = ps.particles[rng.choice(ps.n, p=ps.weights)]
    h = float(expected_reading_many(pose1.x, pose1.y, row[None, :])[0])
    if rng.random() < model.noise.p_d:
        z = h + rng.normal(0.0, model.noise.sigma_bar)
    else:
        z = rng.normal(0.0, model.noise.sigma)
    return model.update(ps, float(z), pose1, rng)


def _argbest(scores: Sequence[float], maximize: bool) -> int:
    """Index of the best score; near-ties resolve to the earliest action."""
    arr = np.asarray(scores, dtype=float)
    best = arr.max() if maximize else arr.min()
    tol = 1e-9 * max(1.0, abs(best))
    qualifying = arr >= best - tol if maximize else arr <= best + tol
    return int(np.argmax(qualifying))


def plan_belief(
    ps: ParticleSet, cfg: LookaheadConfig, rng: np.random.Generator
) -> ParticleSet:
    """Belief copy used by the look-ahead engine.

    Large live sets are thinned by systematic resampling so the per-action
    Monte Carlo stays affordable; every action scores against the same
    thinned copy.
    """
    if cfg.lookahead_particles is None or ps.n <= cfg.lookahead_particles:
        return ps
    return resample_systematic(ps, rng, n=cfg.lookahead_particles)


def _plan(
    ps: ParticleSet,
    pose: Pose,
    model: LookaheadModel,
    cfg: LookaheadConfig,
    rng: np.random.Generator,
    action_set: Sequence[int] | None,
    make_row_stats,
    combine,
    maximize: bool,
) -> int:
    """Score candidate actions with common random numbers.

    The M sampled sources, measurement-noise innovations, and injection
    draws are shared across actions, so scores are paired and differences
    reflect the action rather than Monte Carlo noise.  The detection
    Bernoulli is integrated out exactly: both measurement branches are
    evaluated and mixed by p_d.

    ``make_row_stats(base)`` returns a map from per-observation summaries
    (means, covs, entropies) to a (K, d) statistic array; ``combine`` turns
    the sample-averaged statistic into the scalar score.
    """
    candidates = candidate_actions(pose, model.scenario, action_set)
    base = plan_belief(ps, cfg, rng)
    row_stats = make_row_stats(base)
    m = cfg.mc_samples
    p_d = model.noise.p_d
    # Stratified source draws over the weight CDF cut call-to-call variance;
    # the estimator's expectation is unchanged.
    positions = (rng.random() + np.arange(m)) / m
    cumulative = np.cumsum(base.weights)
    cumulative[-1] = 1.0
    rows = base.particles[np.searchsorted(cumulative, positions)]

    eps_det = rng.normal(0.0, model.noise.sigma_bar, size=m)
    eps_bg = rng.normal(0.0, model.noise.sigma, size=m)

    if model.batch_scorer is not None:
        # The detection Bernoulli is integrated out exactly: both
        # measurement branches are evaluated for every sampled source and
        # mixed by p_d.
        injection_plan, score_batch = model.batch_scorer
        plans = injection_plan(base, rng, m)
        sample_of_row = np.concatenate([np.arange(m), np.arange(m)])
        mix = np.concatenate([np.full(m, p_d), np.full(m, 1.0 - p_d)])
        cache: dict = {}
        scores = []
        for a in candidates:
            pose1 = next_pose(pose, a, model.scenario)
            h = expected_reading_many(pose1.x, pose1.y, rows)
            z_det = np.where(np.isfinite(h), h, 0.0) + eps_det
            z = np.concatenate([z_det, eps_bg])
            means, covs, entropies = score_batch(
                base, pose1, z, sample_of_row, plans, cache
            )
            stats = np.atleast_2d(row_stats(means, covs, entropies).T).T
            mixed = (stats * mix[:, None]).reshape(2, m, -1).sum(axis=0)
            scores.append(combine(mixed.mean(axis=0), pose1))
        return candidates[_argbest(scores, maximize=maximize)]

    update = model.scoring_update or model.update
    update_seeds = rng.integers(0, 2**63 - 1, size=m)
    scores = []
    for a in candidates:
        pose1 = next_pose(pose, a, model.scenario)
        h = expected_reading_many(pose1.x, pose1.y, rows)
        per_sample = []
        for j in range(m):
            z_det = float(h[j] + eps_det[j]) if np.isfinite(h[j]) else float(eps_det[j])
            hypos = [
                update(base, z_det, pose1, np.random.default_rng(update_seeds[j])),
                update(base, float(eps_bg[j]), pose1, np.random.default_rng(update_seeds[j])),
            ]
            means = np.stack([b.weights @ b.particles for b in hypos])
            covs = np.stack([mean_cov(b)[1] for b in hypos])
            entropies = np.array([weight_entropy(b) for b in hypos])
            stats = np.atleast_2d(row_stats(means, covs, entropies).T).T
            per_sample.append(p_d * stats[0] + (1.0 - p_d) * stats[1])
        scores.append(combine(np.mean(per_sample, axis=0), pose1))
    return candidates[_argbest(scores, maximize=maximize)]


def _kl_rows(
    means: np.ndarray, covs: np.ndarray, live: BeliefSummary, ridge: float
) -> np.ndarray:
    """KL of each (mean, cov) row against the live summary, fully batched."""
    n_rows, k = means.shape
    chol = np.linalg.cholesky(live.cov)
    logdet_live = 2.0 * np.sum(np.log(np.diag(chol)))
    covs = covs + ridge * np.eye(k)
    diffs = live.mean[None, :] - means
    # Sigma_live^-1 applied to all row covariances and mean differences in
    # two stacked triangular solves.
    flat = np.concatenate(
        [covs.transpose(1, 0, 2).reshape(k, n_rows * k), diffs.T], axis=1
    )
    half = solve_triangular(chol, flat, lower=True, check_finite=False)
    solved = solve_triangular(chol.T, half, lower=False, check_finite=False)
    solved_cov = solved[:, : n_rows * k].reshape(k, n_rows, k)
    solved_diff = solved[:, n_rows * k :].T
    traces = np.einsum("iri->r", solved_cov)
    quad = np.einsum("ri,ri->r", diffs, solved_diff)
    signs, logdets = np.linalg.slogdet(covs)
    kl = 0.5 * (traces + quad - k + logdet_live - logdets)
    kl[signs <= 0] = 0.0
    return np.maximum(kl, 0.0)


def info_gain_action(
    ps: ParticleSet,
    pose: Pose,
    model: LookaheadModel,
    cfg: LookaheadConfig,
    rng: np.random.Generator,
    action_set: Sequence[int] | None = None,
) -> int:
    """Greedy one-step information gain, penalized by path length."""

    def make_row_stats(base: ParticleSet):
        live = belief_summary(base, ridge=cfg.summary_ridge)

        def row_stats(means, covs, entropies):
            return _kl_rows(means, covs, live, cfg.summary_ridge)

        return row_stats

    def combine(avg, pose1: Pose) -> float:
        step_len = math.hypot(pose1.x - pose.x, pose1.y - pose.y)
        return float(avg[0]) - cfg.step_penalty * step_len - cfg.time_penalty

    return _plan(
        ps, pose, model, cfg, rng, action_set, make_row_stats, combine, maximize=True
    )


def infotaxis_action(
    ps: ParticleSet,
    pose: Pose,
    model: LookaheadModel,
    cfg: LookaheadConfig,
    rng: np.random.Generator,
    action_set: Sequence[int] | None = None,
) -> int:
    """Minimize the expected positional posterior variance."""

    def make_row_stats(_base: ParticleSet):
        def row_stats(means, covs, entropies):
            return covs[:, 0, 0] + covs[:, 1, 1]

        return row_stats

    def combine(avg, _pose1: Pose) -> float:
        return float(avg[0])

    return _plan(
        ps, pose, model, cfg, rng, action_set, make_row_stats, combine, maximize=False
    )


def entrotaxis_action(
    ps: ParticleSet,
    pose: Pose,
    model: LookaheadModel,
    cfg: LookaheadConfig,
    rng: np.random.Generator,
    action_set: Sequence[int] | None = None,
) -> int:
    """Maximize the expected entropy of the hypothetical posterior weights."""

    def make_row_stats(_base: ParticleSet):
        def row_stats(means, covs, entropies):
            return entropies

        return row_stats

    def combine(avg, _pose1: Pose) -> float:
        return float(avg[0])

    return _plan(
        ps, pose, model, cfg, rng, action_set, make_row_stats, combine, maximize=True
    )


def dcee_action(
    ps: ParticleSet,
    pose: Pose,
    model: LookaheadModel,
    cfg: LookaheadConfig,
    rng: np.random.Generator,
    action_set: Sequence[int] | None = None,
) -> int:
    """Dual control: squared distance to the expected positional mean plus a
    weighted positional covariance trace."""

    def make_row_stats(_base: ParticleSet):
        def row_stats(means, covs, entropies):
            return np.column_stack(
                [means[:, 0], means[:, 1], covs[:, 0, 0] + covs[:, 1, 1]]
            )

        return row_stats

    def combine(avg, pose1: Pose) -> float:
        dist2 = (avg[0] - pose1.x) ** 2 + (avg[1] - pose1.y) ** 2
        return float(dist2 + cfg.dcee_lambda * avg[2])

    return _plan(
        ps, pose, model, cfg, rng, action_set, make_row_stats, combine, maximize=False
    )


def agdc_should_stop(
    b: BeliefSummary, cfg: LookaheadConfig, lps: float | None = None
) -> bool:
    """Stop when the selected standard-deviation norm drops to the threshold.

    With the default positional dims the test is in domain units; passing
    ``agdc_dims=None`` uses the full 7-dimensional vector.  The optional
    localization gate only applies when a ground-truth error is supplied
    (simulation diagnostics).
    """
    std = np.sqrt(np.clip(np.diag(b.cov), 0.0, None))
    if cfg.agdc_dims is not None:
        std = std[list(cfg.agdc_dims)]
    stop = float(np.linalg.norm(std)) <= cfg.agdc_zeta
    if cfg.lps_gate is not None and lps is not None:
        stop = stop and lps <= cfg.lps_gate
    return stop


PLANNERS: dict[str, Callable[..., int]] = {
    "info_gain": info_gain_action,
    "infotaxis": infotaxis_action,
    "entrotaxis": entrotaxis_action,
    "dcee": dcee_action,
}
