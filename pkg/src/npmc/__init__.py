"""Nonlinear population Monte Carlo for state-space parameter estimation.

Adaptive importance sampling over the static parameters of a state-space
model, with particle-filter likelihood estimates, weight clipping against
degeneracy, a plain PMC variant and a particle Metropolis-Hastings
baseline, plus a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .numerics import (
    DegenerateWeights,
    Gaussian,
    NumericalError,
    RngStream,
    gaussian_log_pdf,
    log_sum_exp,
    multinomial_sample,
    normalize_log_weights,
    sample_multivariate_gaussian,
    weighted_mean_cov,
)
from .particle_filter import (
    LikelihoodEstimate,
    ParticleFilterLikelihood,
    filter_posterior_mean,
    run_bootstrap_filter,
)
from .pmc import (
    GaussianProposal,
    SamplerConfig,
    WeightedParameterCloud,
    clip_weights,
    estimation_error,
    nis_iteration,
    posterior_mean,
    posterior_mse_estimate,
    run_sampler,
    run_sampler_loglik,
)
from .pmh import ChainState, PmhConfig, PmhResult, pmh_posterior_mean, run_pmh, run_pmh_loglik
from .ssm import LinearGaussianModel, StateSpaceModel, kalman_log_likelihood
from .tracking import (
    SensorGrid,
    TrackingModel,
    TrackingParams,
    load_dataset,
    reflect,
    save_dataset,
    simulate_dataset,
)

__all__ = [
    "__version__",
    "DegenerateWeights",
    "NumericalError",
    "RngStream",
    "Gaussian",
    "log_sum_exp",
    "normalize_log_weights",
    "multinomial_sample",
    "sample_multivariate_gaussian",
    "gaussian_log_pdf",
    "weighted_mean_cov",
    "StateSpaceModel",
    "LinearGaussianModel",
    "kalman_log_likelihood",
    "TrackingParams",
    "TrackingModel",
    "SensorGrid",
    "reflect",
    "simulate_dataset",
    "save_dataset",
    "load_dataset",
    "LikelihoodEstimate",
    "run_bootstrap_filter",
    "filter_posterior_mean",
    "ParticleFilterLikelihood",
    "SamplerConfig",
    "WeightedParameterCloud",
    "GaussianProposal",
    "clip_weights",
    "nis_iteration",
    "run_sampler",
    "run_sampler_loglik",
    "posterior_mean",
    "posterior_mse_estimate",
    "estimation_error",
    "ChainState",
    "PmhConfig",
    "PmhResult",
    "run_pmh",
    "run_pmh_loglik",
    "pmh_posterior_mean",
]
