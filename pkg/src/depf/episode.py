"""Single-episode loop: belief update, stop test, plan, act, observe.

Each episode owns three independent random streams (environment, filter,
planner) derived from its seed, so outcomes are reproducible bit-for-bit and
independent of how episodes are scheduled across workers.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import (
    DepfConfig,
    compute_support_box,
    depf_step,
    entropy_beta,
    exploratory_count,
    inject_exploratory,
    regularize_weights,
)
from .environment import (
    EpisodeState,
    Scenario,
    observe,
    param_prior,
    sample_source,
    sample_start,
    step_agent,
)
from .particles import (
    ParticleSet,
    PriorBox,
    ess,
    init_from_prior,
    resample_systematic,
    weight_update,
)
from .perturb import PerturbConfig, jitter, rejuvenate, roughen
from .planners import (
    ACTIONS,
    PLANNERS,
    LookaheadConfig,
    LookaheadModel,
    UpdateFn,
    agdc_should_stop,
    belief_summary,
)
from .plume import ConfigurationError, Pose, SensorNoise, expected_reading_many

log = logging.getLogger("depf")

METHODS = ("bootstrap", "depf", "jitter", "roughen", "rejuvenate")

TERMINATION_AGDC = "agdc"
TERMINATION_TIMEOUT = "timeout"
TERMINATION_DEGENERATE = "degenerate"


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one seeded episode."""

    seed: int
    success: bool
    steps_used: int
    distance: float
    wall_seconds: float
    final_lps: float
    termination: str


def make_update_fn(
    method: str,
    scenario: Scenario,
    noise: SensorNoise,
    prior: PriorBox,
    depf_cfg: DepfConfig,
    perturb_cfg: PerturbConfig,
    resample_frac: float = 0.6,
) -> UpdateFn:
    """Bind a method name to its per-observation belief update.

    Every method shares the bootstrap core (likelihood reweighting plus an
    ESS-gated systematic resample); the perturbation baselines append their
    always-on move and the diffusion method replaces the whole step.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; pick from {METHODS}")
    domain = scenario.domain

    if method == "depf":

        def update(ps: ParticleSet, z: float, pose: Pose, rng: np.random.Generator):
            return depf_step(ps, z, pose, noise, prior, depf_cfg, rng, domain)

        return update

    def bootstrap_core(ps: ParticleSet, z: float, pose: Pose, rng: np.random.Generator):
        ps = weight_update(ps, z, pose, noise)
        offset = rng.random()
        if ess(ps) / ps.n < resample_frac:
            ps = resample_systematic(ps, rng, offset=offset)
        return ps

    if method == "bootstrap":
        return bootstrap_core

    if method == "jitter":

        def update(ps, z, pose, rng):
            return jitter(bootstrap_core(ps, z, pose, rng), perturb_cfg, rng, domain)

        return update

    if method == "roughen":

        def update(ps, z, pose, rng):
            return roughen(bootstrap_core(ps, z, pose, rng), perturb_cfg, rng, domain)

        return update

    def update(ps, z, pose, rng):
        ps = bootstrap_core(ps, z, pose, rng)
        return rejuvenate(ps, perturb_cfg, z, pose, noise, rng, domain)

    return update


def make_batch_scorer(
    method: str,
    scenario: Scenario,
    noise: SensorNoise,
    prior: PriorBox,
    depf_cfg: DepfConfig,
):
    """Vectorized equivalent of the scoring update for the look-ahead engine.

    Evaluates the belief update for a whole batch of simulated observations
    at one pose in a few array operations, returning per-observation moment
    summaries (weighted mean, covariance, weight entropy).  The update
    semantics match :func:`make_scoring_update_fn`: optional exploratory
    injection, likelihood reweighting, entropy smoothing.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; pick from {METHODS}")
    domain = scenario.domain
    is_depf = method == "depf"

    def injection_plan(base: ParticleSet, rng: np.random.Generator, m: int):
        """Per-sample injections, drawn once per planning call.

        Each plan carries the patched particle array, its squared-outer
        reshaping for covariance work, and the injected log-weights, so the
        per-action scorer only patches likelihood rows.
        """
        if not is_depf:
            return None
        fire = depf_cfg.injection_mode == "always" or (
            depf_cfg.injection_mode == "triggered"
            and base.fit_ess_frac < depf_cfg.trigger_ess_frac
            and exploratory_count(base.n, depf_cfg) >= 1
        )
        if not fire:
            return None
        box = compute_support_box(base, depf_cfg, domain)
        n_e = exploratory_count(base.n, depf_cfg)
        eps = depf_cfg.epsilon_explore
        plans = []
        for _ in range(m):
            idx = rng.choice(base.n, size=n_e, replace=False)
            rows = np.empty((n_e, 7))
            rows[:, 0] = rng.uniform(0.0, box.x_hi, size=n_e)
            rows[:, 1] = rng.uniform(0.0, box.y_hi, size=n_e)
            rows[:, 2:] = rng.uniform(prior.lower[2:], prior.upper[2:], size=(n_e, 5))
            pts = base.particles.copy()
            pts[idx] = rows
            w = base.weights * (1.0 - eps)
            w[idx] = eps / n_e
            w /= w.sum()
            plans.append(
                {
                    "idx": idx,
                    "rows": rows,
                    "pts": pts,
                    "p2": (pts[:, :, None] * pts[:, None, :]).reshape(base.n, 49),
                    "log_w0": _safe_log(w),
                }
            )
        return plans

    def score_batch(
        base: ParticleSet, pose1: Pose, z_matrix, sample_of_row, plans, cache=None
    ):
        """Summaries for each simulated observation.

        z_matrix: (K,) observation values; sample_of_row: (K,) index of the
        Monte Carlo sample each row belongs to (selects its injection plan).
        ``cache`` (dict) carries per-planning-call intermediates that do not
        depend on the pose.  Returns (means (K,7), covs (K,7,7),
        entropies (K,)).
        """
        n = base.n
        k = len(z_matrix)
        z = np.asarray(z_matrix)
        h_base = expected_reading_many(pose1.x, pose1.y, base.particles)
        ll = _batch_log_likelihood(z, h_base[None, :], noise)
        if ll.shape[0] == 1:
            ll = np.repeat(ll, k, axis=0)
        if plans is None:
            log_w = ll + _safe_log(base.weights)[None, :]
        else:
            # Patch the injected slots: their readings and base weights
            # differ per Monte Carlo sample.
            stacked = np.vstack([p["rows"] for p in plans])
            h_inj_all = expected_reading_many(pose1.x, pose1.y, stacked).reshape(
                len(plans), -1
            )
            log_w = np.empty((k, n))
            for row in range(k):
                plan = plans[sample_of_row[row]]
                log_w[row] = plan["log_w0"]
            log_w += ll
            for row in range(k):
                plan = plans[sample_of_row[row]]
                idx = plan["idx"]
                ll_inj = _batch_log_likelihood(
                    z[row : row + 1], h_inj_all[sample_of_row[row]][None, :], noise
                )[0]
                log_w[row, idx] = plan["log_w0"][idx] + ll_inj
        log_w -= log_w.max(axis=1, keepdims=True)
        w = np.exp(log_w)
        totals = w.sum(axis=1, keepdims=True)
        w /= totals
        log_w -= np.log(totals)
        if is_depf:
            w, log_w = _batch_temper(w, log_w, depf_cfg)
        entropies = -np.einsum("kn,kn->k", w, np.where(np.isfinite(log_w), log_w, 0.0))
        means = np.empty((k, 7))
        covs = np.empty((k, 7, 7))
        if plans is None:
            pts = base.particles
            if cache is not None and "p2" in cache:
                p2 = cache["p2"]
            else:
                p2 = (pts[:, :, None] * pts[:, None, :]).reshape(n, 49)
                if cache is not None:
                    cache["p2"] = p2
            means[:] = w @ pts
            e2 = (w @ p2).reshape(k, 7, 7)
            covs[:] = e2 - means[:, :, None] * means[:, None, :]
        else:
            for m_idx, plan in enumerate(plans):
                rows_here = np.where(sample_of_row == m_idx)[0]
                if rows_here.size == 0:
                    continue
                wm = w[rows_here]
                means[rows_here] = wm @ plan["pts"]
                e2 = (wm @ plan["p2"]).reshape(rows_here.size, 7, 7)
                covs[rows_here] = e2 - (
                    means[rows_here][:, :, None] * means[rows_here][:, None, :]
                )
        return means, covs, entropies

    return injection_plan, score_batch


def _safe_log(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def _batch_log_likelihood(z: np.ndarray, h: np.ndarray, noise: SensorNoise):
    """Mixture log-likelihood for a (K,) observation batch against (K, N)
    expected readings."""
    z = z[:, None]
    log_bg = -0.5 * (z / noise.sigma) ** 2 - math.log(
        noise.sigma * math.sqrt(2 * math.pi)
    )
    bad = ~np.isfinite(h)
    h_safe = np.where(bad, 0.0, h)
    log_det = -0.5 * ((z - h_safe) / noise.sigma_bar) ** 2 - math.log(
        noise.sigma_bar * math.sqrt(2 * math.pi)
    )
    if bad.any():
        log_det = np.where(bad, -np.inf, log_det)
    if noise.p_d <= 0.0:
        out = np.broadcast_to(log_bg, log_det.shape).copy()
    elif noise.p_d >= 1.0:
        out = log_det
    else:
        out = np.logaddexp(
            math.log(1.0 - noise.p_d) + log_bg, math.log(noise.p_d) + log_det
        )
    if bad.any():
        out = np.where(np.isnan(h), -np.inf, out)
    return out


def _batch_temper(w: np.ndarray, log_w: np.ndarray, cfg: DepfConfig):
    """Row-wise entropy smoothing matching regularize_weights; returns the
    smoothed weights with their logs."""
    n = w.shape[1]
    h_target = cfg.h_target_frac * math.log(n) if n > 1 else 0.0
    ent = -np.einsum("kn,kn->k", w, np.where(np.isfinite(log_w), log_w, 0.0))
    if cfg.reg_mode == "tempering":
        if h_target <= 0.0:
            return w, log_w
        t = 1.0 + np.maximum(0.0, (h_target - ent) / h_target)
        hot = t > 1.0
        if not hot.any():
            return w, log_w
        lw = log_w[hot] / t[hot, None]
        lw -= lw.max(axis=1, keepdims=True)
        out = np.exp(lw)
        totals = out.sum(axis=1, keepdims=True)
        out /= totals
        lw -= np.log(totals)
        w = w.copy()
        log_w = log_w.copy()
        w[hot] = out
        log_w[hot] = lw
        return w, log_w
    betas = np.array(
        [entropy_beta(e, h_target, cfg.beta_min, cfg.beta_max) for e in ent]
    )
    out = w + betas[:, None] * ent[:, None]
    out /= out.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        return out, np.log(out)


def make_scoring_update_fn(
    method: str,
    scenario: Scenario,
    noise: SensorNoise,
    prior: PriorBox,
    depf_cfg: DepfConfig,
) -> UpdateFn:
    """Belief update used to score look-ahead rollouts.

    Keeps the stages through which a simulated observation changes the
    belief's moments (exploratory injection, likelihood reweighting, weight
    smoothing) and drops the support-maintenance tail (resampling, kernel
    diffusion, rejuvenation moves), whose effect on moment summaries is the
    same for every candidate action and would only add Monte Carlo noise to
    the action ranking.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; pick from {METHODS}")
    if method != "depf":

        def score_update(ps, z, pose, rng):
            return weight_update(ps, z, pose, noise)

        return score_update

    domain = scenario.domain

    def score_update(ps, z, pose, rng):
        fire = depf_cfg.injection_mode == "always" or (
            depf_cfg.injection_mode == "triggered"
            and ps.fit_ess_frac < depf_cfg.trigger_ess_frac
            and exploratory_count(ps.n, depf_cfg) >= 1
        )
        if fire:
            box = compute_support_box(ps, depf_cfg, domain)
            ps = inject_exploratory(ps, box, prior, depf_cfg, rng)
        ps = weight_update(ps, z, pose, noise)
        return regularize_weights(ps, depf_cfg)

    return score_update


def episode_streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent (environment, filter, planner) generators for one seed."""
    root = np.random.SeedSequence(seed)
    return tuple(np.random.default_rng(s) for s in root.spawn(3))


def run_episode(
    scenario: Scenario,
    method: str,
    planner: str,
    n_particles: int,
    seed: int,
    noise: SensorNoise,
    depf_cfg: DepfConfig,
    perturb_cfg: PerturbConfig,
    lookahead_cfg: LookaheadConfig,
    on_step: Callable[[int, ParticleSet, EpisodeState], None] | None = None,
) -> EpisodeResult:
    """Run one seeded episode to termination.

    Success means the stop rule fired with the positional belief mean inside
    the scenario's success radius.  Sub-module failures terminate the episode
    as ``degenerate`` instead of aborting the batch.
    """
    if planner not in PLANNERS:
        raise ConfigurationError(
            f"unknown planner {planner!r}; pick from {tuple(PLANNERS)}"
        )
    t0 = time.perf_counter()
    env_rng, filt_rng, plan_rng = episode_streams(seed)
    prior = param_prior(scenario)
    update = make_update_fn(method, scenario, noise, prior, depf_cfg, perturb_cfg)
    model = LookaheadModel(
        scenario=scenario,
        noise=noise,
        update=update,
        scoring_update=make_scoring_update_fn(method, scenario, noise, prior, depf_cfg),
        batch_scorer=make_batch_scorer(method, scenario, noise, prior, depf_cfg),
    )
    plan = PLANNERS[planner]

    state = EpisodeState(
        true_theta=sample_source(scenario, env_rng), pose=sample_start(scenario, env_rng)
    )
    true_pos = np.array([state.true_theta.x_s, state.true_theta.y_s])
    ps = init_from_prior(prior, n_particles, filt_rng)

    termination = TERMINATION_TIMEOUT
    steps_used = 0
    final_lps = float(
        np.linalg.norm(belief_summary(ps, lookahead_cfg.summary_ridge).mean[:2] - true_pos)
    )
    try:
        for k in range(1, scenario.step_budget + 1):
            obs = observe(state, noise, env_rng)
            ps = update(ps, obs.z, state.pose, filt_rng)
            steps_used = k
            summary = belief_summary(ps, lookahead_cfg.summary_ridge)
            final_lps = float(np.linalg.norm(summary.mean[:2] - true_pos))
            if on_step is not None:
                on_step(k, ps, state)
            if agdc_should_stop(summary, lookahead_cfg, lps=final_lps):
                termination = TERMINATION_AGDC
                break
            if k < scenario.step_budget:
                action = plan(ps, state.pose, model, lookahead_cfg, plan_rng)
                state = step_agent(state, ACTIONS[action], scenario)
    except Exception:
        log.exception("episode seed %d degenerated", seed)
        termination = TERMINATION_DEGENERATE

    success = termination == TERMINATION_AGDC and final_lps <= scenario.success_radius
    return EpisodeResult(
        seed=seed,
        success=success,
        steps_used=steps_used,
        distance=state.distance_traveled,
        wall_seconds=time.perf_counter() - t0,
        final_lps=final_lps,
        termination=termination,
    )
