"""Sequential Monte Carlo source-term estimation with belief-triggered
support expansion, classical perturbation baselines, information-theoretic
planners, and a seeded benchmark harness."""

from .diffusion import (
    DepfConfig,
    SupportBox,
    compute_support_box,
    depf_step,
    diffuse,
    inject_exploratory,
    kernel_bandwidth,
    mh_validate,
    regularize_weights,
)
from .environment import (
    Box,
    EpisodeState,
    Observation,
    Scenario,
    make_scenario,
    observe,
    param_prior,
    sample_source,
    step_agent,
)
from .episode import METHODS, EpisodeResult, make_update_fn, run_episode
from .harness import (
    ExperimentConfig,
    MetricsSummary,
    compute_metrics,
    run_batch,
)
from .particles import (
    ParticleSet,
    PriorBox,
    ess,
    init_from_prior,
    mean_cov,
    resample_systematic,
    weight_entropy,
    weight_update,
)
from .perturb import PerturbConfig, jitter, rejuvenate, roughen
from .planners import (
    ACTIONS,
    PLANNERS,
    BeliefSummary,
    LookaheadConfig,
    LookaheadModel,
    agdc_should_stop,
    belief_summary,
    dcee_action,
    entrotaxis_action,
    info_gain_action,
    infotaxis_action,
    kl_gaussian,
    lookahead_belief,
)
from .plume import (
    ConfigurationError,
    Pose,
    SensorNoise,
    SourceParams,
    expected_reading,
    likelihood,
    sample_measurement,
)

__version__ = "0.1.0"
