"""Adaptive importance samplers over the static parameters of a state-space model.

One iteration draws a population of parameter samples from a Gaussian
proposal, weights each by an estimated likelihood times prior over
proposal, optionally clips the largest weights, and normalizes.  Across
iterations the proposal is refit to the weighted population's mean and
covariance.  Clipping flattens the ``clip_count`` largest raw weights down
to the ``clip_count``-th largest value, which bounds every normalized
weight by ``1/clip_count`` and is what keeps the population from
degenerating onto a single sample.  With ``transform="identity"`` the same
loop is a plain (unclipped) population Monte Carlo baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DegenerateWeights,
    Gaussian,
    RngStream,
    normalize_log_weights,
    weighted_mean_cov,
)
from .particle_filter import ParticleFilterLikelihood
from .ssm import StateSpaceModel

__all__ = [
    "GaussianProposal",
    "SamplerConfig",
    "WeightedParameterCloud",
    "clip_weights",
    "nis_iteration",
    "run_sampler",
    "run_sampler_loglik",
    "posterior_mean",
    "posterior_mse_estimate",
    "estimation_error",
    "save_clouds",
    "load_clouds",
]

# The refit proposal is just a Gaussian density; alias for readability.
GaussianProposal = Gaussian

TRANSFORMS = ("clip", "identity")


@dataclass
class SamplerConfig:
    """Population sampler settings.

    ``clip_count`` defaults to ``floor(sqrt(n_samples))``, the strongest
    clipping the square-root rule allows; it must stay within
    ``[1, sqrt(n_samples)]``.  ``transform="identity"`` disables clipping
    (the plain PMC baseline).
    """

    n_samples: int
    n_iterations: int
    n_particles: int
    clip_count: int | None = None
    transform: str = "clip"

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")
        root = math.isqrt(self.n_samples)
        if self.clip_count is None:
            self.clip_count = max(1, root)
        if not 1 <= self.clip_count <= max(1, root):
            raise ValueError(
                f"clip_count={self.clip_count} outside [1, sqrt(n_samples)={root}]"
            )


@dataclass(frozen=True)
class WeightedParameterCloud:
    """One iteration's weighted parameter population."""

    samples: np.ndarray
    raw_log_weights: np.ndarray
    transformed_log_weights: np.ndarray
    normalized_weights: np.ndarray
    iteration_index: int

    @property
    def size(self) -> int:
        return self.samples.shape[0]


def clip_weights(raw_log_weights, clip_count: int) -> np.ndarray:
    """Flatten the ``clip_count`` largest log weights to the ``clip_count``-th largest.

    Ties at the threshold are resolved by value: every weight at or above
    the threshold is set to it, weights below are unchanged.
    """
    arr = np.asarray(raw_log_weights, dtype=float)
    n = arr.size
    if not 1 <= clip_count <= n:
        raise ValueError(f"clip_count={clip_count} outside [1, {n}]")
    threshold = np.partition(arr, n - clip_count)[n - clip_count]
    return np.minimum(arr, threshold)


def _build_cloud(
    samples: np.ndarray,
    raw: np.ndarray,
    config: SamplerConfig,
    iteration: int,
) -> WeightedParameterCloud:
    if config.transform == "clip":
        transformed = clip_weights(raw, config.clip_count)
    else:
        transformed = raw.copy()
    try:
        normalized = normalize_log_weights(transformed)
    except DegenerateWeights as exc:
        raise DegenerateWeights(
            f"iteration {iteration}: all transformed weights are zero"
        ) from exc
    return WeightedParameterCloud(samples, raw, transformed, normalized, iteration)


def sample_cloud(
    loglik,
    prior: Gaussian,
    proposal: Gaussian | None,
    config: SamplerConfig,
    rng: RngStream,
    iteration: int,
) -> WeightedParameterCloud:
    """Draw one weighted population using ``loglik(thetas, streams)``.

    With ``proposal=None`` samples come from the prior and raw weights are
    the likelihood estimates alone (the proposal-density correction cancels
    against the prior).  Otherwise raw log weights are
    ``loglik + log prior - log proposal``.  Likelihood stream ``i`` is
    derived from ``(iteration, i)`` so results never depend on evaluation
    order.
    """
    it_rng = rng.derive(iteration)
    draw_rng = it_rng.derive(config.n_samples)
    if proposal is None:
        thetas = prior.sample(config.n_samples, draw_rng)
    else:
        thetas = proposal.sample(config.n_samples, draw_rng)
    streams = [it_rng.derive(i) for i in range(config.n_samples)]
    raw = np.asarray(loglik(thetas, streams), dtype=float)
    if proposal is not None:
        raw = raw + prior.log_pdf(thetas) - proposal.log_pdf(thetas)
    return _build_cloud(thetas, raw, config, iteration)


def run_sampler_loglik(
    loglik,
    prior: Gaussian,
    config: SamplerConfig,
    rng: RngStream,
) -> list[WeightedParameterCloud]:
    """Full adaptive run against an abstract likelihood: K+1 populations.

    Iteration 0 samples the prior; each later iteration refits a Gaussian
    proposal to the previous population's weighted mean and covariance.
    """
    clouds = [sample_cloud(loglik, prior, None, config, rng, 0)]
    for k in range(1, config.n_iterations + 1):
        prev = clouds[-1]
        mean, cov = weighted_mean_cov(prev.samples, prev.normalized_weights)
        proposal = Gaussian(mean, cov)
        clouds.append(sample_cloud(loglik, prior, proposal, config, rng, k))
    return clouds


def run_sampler(
    model: StateSpaceModel,
    prior: Gaussian,
    observations,
    config: SamplerConfig,
    rng: RngStream,
) -> list[WeightedParameterCloud]:
    """Full adaptive run with particle-filter likelihood estimates."""
    loglik = ParticleFilterLikelihood(model, observations, config.n_particles)
    return run_sampler_loglik(loglik, prior, config, rng)


def nis_iteration(
    proposal: Gaussian | None,
    model: StateSpaceModel,
    prior: Gaussian,
    observations,
    config: SamplerConfig,
    rng: RngStream,
    iteration: int | None = None,
) -> WeightedParameterCloud:
    """One importance-sampling iteration against the particle-filter likelihood.

    ``proposal=None`` runs the initial (prior-sampling) iteration.
    """
    if iteration is None:
        iteration = 0 if proposal is None else 1
    loglik = ParticleFilterLikelihood(model, observations, config.n_particles)
    return sample_cloud(loglik, prior, proposal, config, rng, iteration)


def posterior_mean(cloud: WeightedParameterCloud) -> np.ndarray:
    """Weighted average of the population's samples."""
    return cloud.normalized_weights @ cloud.samples


def posterior_mse_estimate(cloud: WeightedParameterCloud) -> float:
    """Weighted squared spread around the population's posterior mean."""
    centered = cloud.samples - posterior_mean(cloud)
    return float(cloud.normalized_weights @ (centered * centered).sum(axis=1))


def estimation_error(cloud: WeightedParameterCloud, truth) -> float:
    """Squared distance between the posterior-mean estimate and the truth."""
    truth = np.asarray(truth, dtype=float)
    mean = posterior_mean(cloud)
    if mean.shape != truth.shape:
        raise ValueError(f"dimension mismatch: {mean.shape} vs {truth.shape}")
    diff = mean - truth
    return float(diff @ diff)


def save_clouds(path, clouds) -> None:
    """Write populations as CSV: theta components, weights, iteration index."""
    if isinstance(clouds, WeightedParameterCloud):
        clouds = [clouds]
    dim = clouds[0].samples.shape[1]
    columns = [f"theta_{i}" for i in range(dim)]
    columns += ["raw_log_weight", "transformed_log_weight", "normalized_weight", "iteration"]
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for cloud in clouds:
            for i in range(cloud.size):
                fields = [repr(float(v)) for v in cloud.samples[i]]
                fields.append(repr(float(cloud.raw_log_weights[i])))
                fields.append(repr(float(cloud.transformed_log_weights[i])))
                fields.append(repr(float(cloud.normalized_weights[i])))
                fields.append(str(cloud.iteration_index))
                fh.write(",".join(fields) + "\n")


def load_clouds(path) -> list[WeightedParameterCloud]:
    """Read populations written by :func:`save_clouds`."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    dim = sum(1 for name in header if name.startswith("theta_"))
    by_iteration: dict[int, list[list[str]]] = {}
    for row in rows:
        by_iteration.setdefault(int(row[-1]), []).append(row)
    clouds = []
    for iteration in sorted(by_iteration):
        block = by_iteration[iteration]
        data = np.array([[float(v) for v in row[:-1]] for row in block])
        clouds.append(
            WeightedParameterCloud(
                samples=data[:, :dim],
                raw_log_weights=data[:, dim],
                transformed_log_weights=data[:, dim + 1],
                normalized_weights=data[:, dim + 2],
                iteration_index=iteration,
            )
        )
    return clouds
