"""Weighted-particle machinery shared by every filter variant.

A :class:`ParticleSet` is an (N, 7) array of source hypotheses plus
normalized weights.  The operations here are the bootstrap building blocks:
prior initialization, likelihood reweighting (the prediction step is the
identity because the source is static), effective sample size, systematic
resampling, weighted moments with a diagonal ridge, and weight entropy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .plume import (
    IDX_D,
    IDX_PHI,
    IDX_Q,
    IDX_TAU,
    IDX_U,
    PARAM_DIM,
    ConfigurationError,
    Pose,
    SensorNoise,
    log_likelihood_many,
)

log = logging.getLogger("depf")

# Resampling fires when ESS/N drops below this fraction.
DEFAULT_RESAMPLE_FRAC = 0.6

# Default epsilon inside the weight-entropy logarithm.
ENTROPY_EPS = 1e-12

# Positivity floors for the physical parameters under perturbation moves.
_Q_FLOOR = 1e-6
_D_FLOOR = 1e-6
_TAU_FLOOR = 1e-6
_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PriorBox:
    """Axis-aligned prior support: per-dimension lower/upper bounds (7 each)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != (PARAM_DIM,) or upper.shape != (PARAM_DIM,):
            raise ConfigurationError("prior bounds must be 7-vectors")
        if not np.all(lower < upper):
            raise ConfigurationError(
                f"degenerate prior box: lower={lower.tolist()} upper={upper.tolist()}"
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def extent(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass
class ParticleSet:
    """N weighted source hypotheses approximating the posterior.

    ``fit_ess_frac`` records ESS/N right after the most recent likelihood
    reweighting, before any smoothing or resampling reset; it is the
    belief-surprise diagnostic used to trigger exploratory injection.
    ``loglik`` caches the per-particle log-likelihood of the observation the
    weights were last updated with, letting rejuvenation kernels skip one
    evaluation; any mutation of particle values must drop or remap it.
    """

    particles: np.ndarray
    weights: np.ndarray
    generation: int = 0
    degenerate_resets: int = 0
    mh_accept_frac: float | None = None
    fit_ess_frac: float = 1.0
    loglik: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[1] != PARAM_DIM:
            raise ConfigurationError("particles must be an (N, 7) array")
        if self.weights.shape != (self.particles.shape[0],):
            raise ConfigurationError("weights length must match particle count")
        if self.n < 1:
            raise ConfigurationError("particle set must hold at least one particle")

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    def copy(self) -> "ParticleSet":
        return replace(
            self,
            particles=self.particles.copy(),
            weights=self.weights.copy(),
            loglik=None if self.loglik is None else self.loglik.copy(),
        )


def init_from_prior(prior: PriorBox, n: int, rng: np.random.Generator) -> ParticleSet:
    """Draw n particles uniformly inside the prior box, uniform weights 1/n."""
    if n < 1:
        raise ConfigurationError(f"need at least one particle, got {n}")
    particles = rng.uniform(prior.lower, prior.upper, size=(n, PARAM_DIM))
    weights = np.full(n, 1.0 / n)
    return ParticleSet(particles=particles, weights=weights)


def weight_update(
    ps: ParticleSet, z: float, pose: Pose, noise: SensorNoise
) -> ParticleSet:
    """Bootstrap reweighting: w <- w * p(z | theta), renormalized.

    Particle values are untouched (static prediction).  If every weight is
    numerically zero the set is reset to uniform weights and the event is
    counted and logged rather than aborting the episode.
    """
    ll = log_likelihood_many(z, pose.x, pose.y, ps.particles, noise)
    new = ps.copy()
    new.loglik = ll
    with np.errstate(invalid="ignore"):
        shifted = ll - np.max(ll)
    raw = ps.weights * np.exp(shifted)
    total = raw.sum()
    if not np.isfinite(total) or total <= 0.0:
        log.warning("weight degeneracy at generation %d: uniform reset", ps.generation)
        new.weights = np.full(ps.n, 1.0 / ps.n)
        new.degenerate_resets += 1
        new.fit_ess_frac = 0.0
    else:
        new.weights = raw / total
        new.fit_ess_frac = float(1.0 / (np.sum(new.weights**2) * ps.n))
    return new


def ess(ps: ParticleSet) -> float:
    """Effective sample size 1 / sum(w^2), in [1, N] for normalized weights."""
    return float(1.0 / np.sum(ps.weights**2))


def resample_systematic(
    ps: ParticleSet,
    rng: np.random.Generator,
    n: int | None = None,
    offset: float | None = None,
) -> ParticleSet:
    """Low-variance systematic resampling; output weights are uniform.

    Copy counts equal ``n * w`` rounded by a single stratified offset, so a
    particle with weight j/n yields exactly j copies when j is integral.
    Callers that need an observation-independent draw pattern can pass the
    stratification ``offset`` explicitly.
    """
    n_out = ps.n if n is None else int(n)
    if offset is None:
        offset = rng.random()
    positions = (offset + np.arange(n_out)) / n_out
    cumulative = np.cumsum(ps.weights)
    cumulative[-1] = 1.0
    idx = np.searchsorted(cumulative, positions)
    new = ps.copy()
    new.particles = ps.particles[idx].copy()
    new.weights = np.full(n_out, 1.0 / n_out)
    if ps.loglik is not None:
        new.loglik = ps.loglik[idx].copy()
    return new


def mean_cov(ps: ParticleSet, ridge: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and ridge-stabilized weighted covariance.

    cov = sum_i w_i (theta_i - mu)(theta_i - mu)^T + ridge * I, symmetrized
    exactly; positive definite whenever ridge > 0.
    """
    if ridge < 0:
        raise ConfigurationError(f"ridge must be non-negative, got {ridge}")
    mean = ps.weights @ ps.particles
    centered = ps.particles - mean
    cov = (centered * ps.weights[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    if ridge > 0:
        cov = cov + ridge * np.eye(PARAM_DIM)
    return mean, cov


def weight_entropy(ps: ParticleSet, eps: float = ENTROPY_EPS) -> float:
    """Shannon entropy of the weight vector, -sum w log(w + eps)."""
    return float(-np.sum(ps.weights * np.log(ps.weights + eps)))


def clamp_physical(
    particles: np.ndarray, domain: tuple[float, float] | None = None
) -> np.ndarray:
    """Clamp mutated particles back to physically meaningful values.

    Positions are clipped into the domain rectangle when given; strength,
    diffusivity, and lifetime stay strictly positive, wind speed
    non-negative, and wind direction wraps modulo 2*pi.  Works in place on a
    copy and returns it.
    """
    out = np.array(particles, dtype=float)
    if domain is not None:
        w, h = domain
        np.clip(out[:, 0], 0.0, w, out=out[:, 0])
        np.clip(out[:, 1], 0.0, h, out=out[:, 1])
    np.clip(out[:, IDX_Q], _Q_FLOOR, None, out=out[:, IDX_Q])
    np.clip(out[:, IDX_U], 0.0, None, out=out[:, IDX_U])
    out[:, IDX_PHI] = np.mod(out[:, IDX_PHI], _TWO_PI)
    np.clip(out[:, IDX_D], _D_FLOOR, None, out=out[:, IDX_D])
    np.clip(out[:, IDX_TAU], _TAU_FLOOR, None, out=out[:, IDX_TAU])
    return out
