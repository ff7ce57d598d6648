"""Bootstrap particle filter and the unbiased marginal-likelihood estimate.

Each step propagates every particle through the model's transition kernel,
weights by the observation likelihood, adds ``log(mean weight)`` to the
running log-likelihood, and multinomially resamples.  The estimate of the
likelihood is unbiased in linear domain, which is what both the adaptive
importance samplers and the pseudo-marginal chain rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, multinomial_sample, normalize_log_weights
from .ssm import StateSpaceModel

__all__ = [
    "LikelihoodEstimate",
    "run_bootstrap_filter",
    "filter_posterior_mean",
    "ParticleFilterLikelihood",
]


@dataclass(frozen=True)
class LikelihoodEstimate:
    """Log marginal-likelihood estimate from one bootstrap-filter run."""

    log_value: float
    particle_count: int
    horizon: int


def run_bootstrap_filter(
    model: StateSpaceModel,
    theta: np.ndarray,
    observations,
    n_particles: int,
    rng: RngStream,
) -> LikelihoodEstimate:
    """Estimate ``log l(y | theta)`` with ``n_particles`` particles.

    Resampling is multinomial at every step; each step's likelihood
    increment uses the propagated (pre-resampling) particles.  A step where
    every importance weight is zero yields ``log_value = -inf`` (weight
    collapse is reported, never retried).
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    horizon = obs.shape[0]
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if horizon < 1:
        raise ValueError("observations must be non-empty")
    gen = rng.generator
    log_n = np.log(n_particles)
    states = model.sample_prior(n_particles, rng)
    total = 0.0
    for t in range(1, horizon + 1):
        states = model.sample_transition(states, theta, t, rng)
        log_w = model.obs_log_lik(obs[t - 1], states, theta)
        m = log_w.max()
        if m == -np.inf:
            return LikelihoodEstimate(-np.inf, n_particles, horizon)
        log_w -= m
        w = np.exp(log_w, out=log_w)
        cum = np.cumsum(w, out=w)
        total += m + np.log(cum[-1]) - log_n
        if t < horizon:
            u = gen.random(n_particles)
            u *= cum[-1]
            idx = cum.searchsorted(u, side="right")
            states = states[np.minimum(idx, n_particles - 1)]
    return LikelihoodEstimate(float(total), n_particles, horizon)


def filter_steps(
    model: StateSpaceModel,
    theta: np.ndarray,
    observations,
    n_particles: int,
    rng: RngStream,
):
    """Yield ``(propagated, normalized_weights, resampled)`` per step.

    Slow diagnostic path; consumes the stream in the same order as
    :func:`run_bootstrap_filter` but always resamples, including the last
    step.  Raises :class:`DegenerateWeights` on total weight collapse.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    states = model.sample_prior(n_particles, rng)
    for t in range(1, obs.shape[0] + 1):
        propagated = model.sample_transition(states, theta, t, rng)
        log_w = model.obs_log_lik(obs[t - 1], propagated, theta)
        weights = normalize_log_weights(log_w)
        idx = multinomial_sample(weights, n_particles, rng)
        states = propagated[idx]
        yield propagated, weights, states


def filter_posterior_mean(
    model: StateSpaceModel,
    theta: np.ndarray,
    observations,
    n_particles: int,
    rng: RngStream,
) -> np.ndarray:
    """Per-step unweighted particle mean after resampling, shape ``(R, d_x)``."""
    means = [
        resampled.mean(axis=0)
        for _, _, resampled in filter_steps(model, theta, observations, n_particles, rng)
    ]
    return np.asarray(means)


_CHUNK_BUDGET_BYTES = 16_000_000


def run_bootstrap_filter_batch(
    model: StateSpaceModel,
    thetas: np.ndarray,
    observations,
    n_particles: int,
    streams,
) -> np.ndarray:
    """Run one filter per parameter row, vectorized across the batch.

    The i-th filter consumes only ``streams[i]`` (its noise and resampling
    uniforms are pre-drawn in bulk from that stream), so the result for a
    sample never depends on batch composition or evaluation order.  The
    model must provide ``transition_given_noise`` and ``obs_log_lik_multi``.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    horizon = obs.shape[0]
    thetas = np.atleast_2d(thetas)
    n_batch = thetas.shape[0]
    d_x = model.d_x
    n = n_particles
    log_n = np.log(n)
    per_sample = horizon * n * (d_x + 1) * 8
    chunk = int(min(n_batch, max(1, _CHUNK_BUDGET_BYTES // max(per_sample, 1)), 64))
    out = np.empty(n_batch)
    for start in range(0, n_batch, chunk):
        size = min(chunk, n_batch - start)
        total_particles = size * n
        states = np.empty((total_particles, d_x))
        noise = np.empty((horizon, total_particles, d_x))
        uniforms = np.empty((horizon, total_particles))
        for j in range(size):
            stream = streams[start + j]
            sl = slice(j * n, (j + 1) * n)
            states[sl] = model.sample_prior(n, stream)
            noise[:, sl, :] = stream.generator.standard_normal((horizon, n, d_x))
            uniforms[:, sl] = stream.generator.random((horizon, n))
        theta_rows = np.repeat(thetas[start : start + size], n, axis=0)
        totals = np.zeros(size)
        collapsed = np.zeros(size, dtype=bool)
        row_offset = (np.arange(size) * n)[:, None]
        # rows are shifted by 2*i so one flat searchsorted resamples them all
        sep = 2.0 * np.arange(size)[:, None]
        for t in range(horizon):
            states = model.transition_given_noise(states, noise[t], t + 1)
            log_w = model.obs_log_lik_multi(obs[t], states, theta_rows).reshape(size, n)
            row_max = log_w.max(axis=1)
            dead = row_max == -np.inf
            if dead.any():
                collapsed |= dead
                log_w[dead] = 0.0
                row_max = np.where(dead, 0.0, row_max)
            log_w -= row_max[:, None]
            w = np.exp(log_w, out=log_w)
            cum = np.cumsum(w, axis=1, out=w)
            row_total = cum[:, -1].copy()
            totals += row_max + np.log(row_total) - log_n
            if t < horizon - 1:
                cum /= row_total[:, None]
                cum += sep
                queries = uniforms[t].reshape(size, n) + sep
                idx = cum.ravel().searchsorted(queries.ravel(), side="right")
                idx = idx.reshape(size, n)
                np.minimum(idx, row_offset + (n - 1), out=idx)
                states = states[idx.ravel()]
        totals[collapsed] = -np.inf
        out[start : start + size] = totals
    return out


class ParticleFilterLikelihood:
    """Batch log-likelihood estimator backed by independent filter runs.

    Callable as ``loglik(thetas, streams) -> (M,) array``; the i-th
    evaluation consumes only ``streams[i]``, so results do not depend on
    evaluation order or on how a caller shards the batch across workers.
    ``calls`` counts individual filter runs (the budget unit).  Models that
    expose the vectorized hooks are run through the batched filter; the
    estimator is the same either way.
    """

    def __init__(self, model: StateSpaceModel, observations, n_particles: int):
        self.model = model
        self.observations = np.asarray(observations, dtype=float)
        self.n_particles = n_particles
        self.calls = 0
        self._batchable = hasattr(model, "transition_given_noise") and hasattr(
            model, "obs_log_lik_multi"
        )

    def __call__(self, thetas: np.ndarray, streams) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        self.calls += thetas.shape[0]
        if self._batchable and thetas.shape[0] > 1:
            return run_bootstrap_filter_batch(
                self.model, thetas, self.observations, self.n_particles, streams
            )
        out = np.empty(thetas.shape[0])
        for i, (theta, stream) in enumerate(zip(thetas, streams, strict=True)):
            out[i] = run_bootstrap_filter(
                self.model, theta, self.observations, self.n_particles, stream
            ).log_value
        return out
