"""Analytical gas plume model, sensor simulation, and mixture likelihood.

The forward model gives the expected voltage of a metal-oxide gas sensor at a
pose, for a 7-dimensional source vector (position, release strength, wind
speed and direction, diffusivity, effective lifetime).  Measurements follow a
two-branch detection model: with probability ``p_d`` the sensor reads the
plume value plus detection noise, otherwise it reads background noise only.
The induced likelihood is a two-component Gaussian mixture whose background
component never vanishes, which is what keeps hypotheses far from the current
belief alive during support expansion.

All functions are pure; randomness enters only through an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Column layout of the 7-D source vector, shared by every module.
IDX_X, IDX_Y, IDX_Q, IDX_U, IDX_PHI, IDX_D, IDX_TAU = range(7)
PARAM_DIM = 7
PARAM_NAMES = ("x_s", "y_s", "q_s", "u_s", "phi_s", "d_s", "tau_s")

# Effective distance floor: the point-source kernel diverges at the source,
# so readings closer than this are evaluated at this distance instead.
EPS_DIST = 1e-3

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class ConfigurationError(ValueError):
    """Invalid static configuration (bounds, ratios, enum values)."""


@dataclass(frozen=True)
class Pose:
    """Agent position in the plane."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ConfigurationError(f"non-finite pose ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class SourceParams:
    """Latent source vector: position, strength, wind, diffusivity, lifetime.

    ``phi_s`` is normalized into [0, 2*pi) on construction; the positivity
    constraints on strength, diffusivity, and lifetime are enforced here.
    """

    x_s: float
    y_s: float
    q_s: float
    u_s: float
    phi_s: float
    d_s: float
    tau_s: float

    def __post_init__(self) -> None:
        if self.q_s <= 0 or self.d_s <= 0 or self.tau_s <= 0:
            raise ConfigurationError(
                f"q_s, d_s, tau_s must be positive, got "
                f"({self.q_s}, {self.d_s}, {self.tau_s})"
            )
        if self.u_s < 0:
            raise ConfigurationError(f"u_s must be non-negative, got {self.u_s}")
        object.__setattr__(self, "phi_s", float(self.phi_s) % (2.0 * math.pi))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x_s, self.y_s, self.q_s, self.u_s, self.phi_s, self.d_s, self.tau_s],
            dtype=float,
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "SourceParams":
        x, y, q, u, phi, d, tau = (float(v) for v in np.asarray(arr, dtype=float))
        return cls(x, y, q, u, phi, d, tau)


@dataclass(frozen=True)
class SensorNoise:
    """Noise model of the gas sensor.

    sigma_bar: detection-branch noise std (voltage).
    sigma: background noise std in clean air (voltage).
    p_d: probability that the sensor detects the plume at all.
    """

    sigma_bar: float = 0.5
    sigma: float = 0.4
    p_d: float = 0.8

    def __post_init__(self) -> None:
        if self.sigma_bar <= 0 or self.sigma <= 0:
            raise ConfigurationError("noise stds must be positive")
        if not 0.0 <= self.p_d <= 1.0:
            raise ConfigurationError(f"p_d must lie in [0, 1], got {self.p_d}")


def expected_reading_many(px: float, py: float, params: np.ndarray) -> np.ndarray:
    """Expected sensor voltage at (px, py) for each row of an (N, 7) array.

    The point-source singularity is clamped: distances below ``EPS_DIST``
    are evaluated at ``EPS_DIST``.
    """
    params = np.asarray(params, dtype=float)
    if params.ndim == 1:
        params = params[None, :]
    dx = px - params[:, IDX_X]
    dy = py - params[:, IDX_Y]
    q = params[:, IDX_Q]
    u = params[:, IDX_U]
    phi = params[:, IDX_PHI]
    d = params[:, IDX_D]
    tau = params[:, IDX_TAU]

    r = np.hypot(dx, dy)
    np.maximum(r, EPS_DIST, out=r)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        inv_2d = 0.5 / d
        psi = (dx * np.cos(phi) + dy * np.sin(phi)) * u
        lam = np.sqrt(d * tau / (1.0 + u * u * tau * (0.5 * inv_2d)))
        h = q / ((4.0 * math.pi) * d * r) * np.exp(-r / lam - psi * inv_2d)
    # Unphysical rows (possible for raw diffusion proposals before clamping)
    # carry no plume signal; the likelihood module maps them to zero density.
    valid = (q > 0.0) & (u >= 0.0) & (d > 0.0) & (tau > 0.0)
    if not valid.all():
        h = np.where(valid, h, np.nan)
    return h


def expected_reading(pose: Pose, theta: SourceParams) -> float:
    """Expected sensor voltage h(p; theta) at a single pose."""
    return float(expected_reading_many(pose.x, pose.y, theta.as_array()[None, :])[0])


def sample_measurement(
    pose: Pose, theta: SourceParams, noise: SensorNoise, rng: np.random.Generator
) -> float:
    """Draw one raw sensor voltage, detection branch chosen by Bernoulli(p_d).

    Negative values are permitted: the model describes raw voltage with
    additive Gaussian noise, not a calibrated concentration.
    """
    h = expected_reading(pose, theta)
    detected = rng.random() < noise.p_d
    if detected:
        return h + rng.normal(0.0, noise.sigma_bar)
    return rng.normal(0.0, noise.sigma)


def _log_normal_pdf(z: float, mean: np.ndarray | float, std: float) -> np.ndarray:
    diff = z - mean
    return -0.5 * (diff / std) ** 2 - math.log(std * _SQRT_2PI)


def log_likelihood_many(
    z: float, px: float, py: float, params: np.ndarray, noise: SensorNoise
) -> np.ndarray:
    """Log of the two-component mixture likelihood for each parameter row.

    Evaluated in log space so that extreme residuals degrade gracefully
    instead of underflowing to zero density.
    """
    h = expected_reading_many(px, py, params)
    return log_likelihood_from_readings(z, h, noise)


def log_likelihood_from_readings(
    z: float, h: np.ndarray, noise: SensorNoise
) -> np.ndarray:
    """Mixture log-density given precomputed expected readings.

    NaN readings mark unphysical parameter rows and map to zero density;
    overflowed readings contribute nothing to the detection branch but keep
    the background floor.
    """
    bad = ~np.isfinite(h)
    any_bad = bool(bad.any())
    log_bg = _log_normal_pdf(z, 0.0, noise.sigma)
    if noise.p_d <= 0.0:
        out = np.full(h.shape, log_bg)
    else:
        log_det = _log_normal_pdf(z, h, noise.sigma_bar)
        if any_bad:
            log_det[bad] = -np.inf
        if noise.p_d >= 1.0:
            out = log_det
        else:
            out = np.logaddexp(
                math.log(1.0 - noise.p_d) + log_bg, math.log(noise.p_d) + log_det
            )
    if any_bad:
        out[np.isnan(h)] = -np.inf
    return out


def likelihood(z: float, pose: Pose, theta: SourceParams, noise: SensorNoise) -> float:
    """Mixture density p(z | theta) at one pose; strictly positive for 0 < p_d < 1."""
    ll = log_likelihood_many(z, pose.x, pose.y, theta.as_array()[None, :], noise)
    return float(np.exp(ll[0]))
