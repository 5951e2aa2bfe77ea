"""Classical SMC rejuvenation baselines: jittering, roughening, resample-move.

Each operation is a drop-in post-resampling stage for the bootstrap loop.
All three perturb particle values only; weights are never touched.  Unlike
the belief-triggered expansion step, these run in an always-on fashion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import accept_mask
from .particles import ParticleSet, clamp_physical, mean_cov
from .plume import PARAM_DIM, ConfigurationError, Pose, SensorNoise, log_likelihood_many

# Positional std 0.25 units; other dimensions roughly 1% of their prior
# extent so no single dimension dominates the move.
DEFAULT_JITTER_SIGMA = (0.25, 0.25, 15.0, 0.06, 0.063, 0.04, 0.075)


@dataclass(frozen=True)
class PerturbConfig:
    """Scales of the three classical perturbation kernels."""

    jitter_sigma: tuple[float, ...] = DEFAULT_JITTER_SIGMA
    rough_k: float = 0.2
    rejuv_sigma_rm: float = 0.5
    rejuv_moves: int = 1
    ridge_lambda: float = 1e-2

    def __post_init__(self) -> None:
        object.__setattr__(self, "jitter_sigma", tuple(float(s) for s in self.jitter_sigma))
        if len(self.jitter_sigma) != PARAM_DIM:
            raise ConfigurationError("jitter_sigma must have 7 entries")
        if any(s < 0 for s in self.jitter_sigma):
            raise ConfigurationError("jitter_sigma entries must be non-negative")
        if self.rough_k < 0:
            raise ConfigurationError("rough_k must be non-negative")
        if self.rejuv_sigma_rm < 0:
            raise ConfigurationError("rejuv_sigma_rm must be non-negative")
        if self.rejuv_moves < 1:
            raise ConfigurationError("rejuv_moves must be at least 1")
        if self.ridge_lambda <= 0:
            raise ConfigurationError("ridge_lambda must be positive")


def jitter(
    ps: ParticleSet,
    cfg: PerturbConfig,
    rng: np.random.Generator,
    domain: tuple[float, float] | None = None,
) -> ParticleSet:
    """Independent Gaussian perturbation of every particle, fixed scales."""
    sigma = np.asarray(cfg.jitter_sigma)
    new = ps.copy()
    new.particles = ps.particles + rng.standard_normal(ps.particles.shape) * sigma
    new.particles = clamp_physical(new.particles, domain=domain)
    new.loglik = None
    return new


def roughen(
    ps: ParticleSet,
    cfg: PerturbConfig,
    rng: np.random.Generator,
    domain: tuple[float, float] | None = None,
) -> ParticleSet:
    """Range-scaled Gaussian perturbation, per-dimension std
    K * range * N^(-1/dim).

    Dimensions with zero sample range are left untouched, so a fully
    collapsed cloud stays put.
    """
    ranges = ps.particles.max(axis=0) - ps.particles.min(axis=0)
    sigma = cfg.rough_k * ranges * ps.n ** (-1.0 / PARAM_DIM)
    new = ps.copy()
    new.particles = ps.particles + rng.standard_normal(ps.particles.shape) * sigma
    new.particles = clamp_physical(new.particles, domain=domain)
    new.loglik = None
    return new


def rejuvenate(
    ps: ParticleSet,
    cfg: PerturbConfig,
    z: float,
    pose: Pose,
    noise: SensorNoise,
    rng: np.random.Generator,
    domain: tuple[float, float] | None = None,
) -> ParticleSet:
    """Resample-move rejuvenation: MH moves with covariance-shaped proposals.

    Proposals are N(theta, sigma_rm^2 * Sigma) with Sigma the ridge-stabilized
    weighted covariance; acceptance is the symmetric-proposal likelihood
    ratio.  Weights are unchanged.
    """
    new = ps.copy()
    ll_old = new.loglik
    for _ in range(cfg.rejuv_moves):
        _, cov = mean_cov(new, ridge=cfg.ridge_lambda)
        chol = np.linalg.cholesky(cov)
        proposals = (
            new.particles
            + cfg.rejuv_sigma_rm * rng.standard_normal(new.particles.shape) @ chol.T
        )
        if ll_old is None:
            ll_old = log_likelihood_many(z, pose.x, pose.y, new.particles, noise)
        ll_new = log_likelihood_many(z, pose.x, pose.y, proposals, noise)
        accept = accept_mask(ll_new - ll_old, rng)
        new.particles[accept] = proposals[accept]
        ll_old = np.where(accept, ll_new, ll_old)
        new.mh_accept_frac = float(accept.mean())
    new.particles = clamp_physical(new.particles, domain=domain)
    new.loglik = None
    return new
