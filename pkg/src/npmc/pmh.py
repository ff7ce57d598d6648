"""Pseudo-marginal random-walk Metropolis-Hastings over the static parameters.

Each proposal gets one fresh particle-filter likelihood estimate; the
current state's estimate is cached and reused verbatim until a proposal is
accepted.  Re-estimating the denominator would change the chain's
stationary distribution, so the cache is a correctness requirement, not an
optimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .numerics import Gaussian, NumericalError, RngStream
from .particle_filter import ParticleFilterLikelihood
from .ssm import StateSpaceModel

__all__ = [
    "ChainState",
    "PmhConfig",
    "PmhResult",
    "run_pmh",
    "run_pmh_loglik",
    "pmh_posterior_mean",
    "save_chain",
    "load_chain",
]


def _default_proposal_cov() -> np.ndarray:
    # Scaled diagonal of the parameter-prior variances; the 2/10 factor is
    # an empirically tuned random-walk step size.
    return 0.2 * np.diag([0.22, 4.0, 0.4])


@dataclass(frozen=True)
class ChainState:
    """One chain element with its cached likelihood estimate and prior density."""

    theta: np.ndarray
    log_lik: float
    log_prior: float
    accepted: bool


@dataclass
class PmhConfig:
    """Chain settings: length, random-walk covariance, filter size, burn-in."""

    chain_length: int
    proposal_cov: np.ndarray = field(default_factory=_default_proposal_cov)
    n_particles: int = 400
    burn_in_fraction: float = 0.5

    def __post_init__(self):
        if self.chain_length < 2:
            raise ValueError("chain_length must be >= 2")
        self.proposal_cov = np.atleast_2d(np.asarray(self.proposal_cov, dtype=float))
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must be in [0, 1)")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")


class PmhResult(NamedTuple):
    chain: list[ChainState]
    acceptance_rate: float
    likelihood_calls: int


def run_pmh_loglik(
    loglik,
    prior: Gaussian,
    config: PmhConfig,
    rng: RngStream,
) -> PmhResult:
    """Run the chain against an abstract likelihood ``loglik(thetas, streams)``.

    The returned chain has ``chain_length + 1`` states (the prior draw plus
    one per proposal); exactly ``chain_length + 1`` likelihood evaluations
    are made.  Acceptance tests run in log domain; a ``-inf`` proposal
    estimate is rejected outright.
    """
    try:
        chol = np.linalg.cholesky(config.proposal_cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("proposal covariance is not positive definite") from exc
    walk_rng = rng.derive(0)
    gen = walk_rng.generator
    theta = prior.sample(1, walk_rng)[0]
    log_lik = float(loglik(theta[None, :], [rng.derive(1)])[0])
    log_prior = float(prior.log_pdf(theta))
    chain = [ChainState(theta, log_lik, log_prior, True)]
    n_accept = 0
    n_calls = 1
    for step in range(1, config.chain_length + 1):
        proposal = theta + gen.standard_normal(theta.size) @ chol.T
        prop_log_prior = float(prior.log_pdf(proposal))
        prop_log_lik = float(loglik(proposal[None, :], [rng.derive(1 + step)])[0])
        n_calls += 1
        log_alpha = (prop_log_lik + prop_log_prior) - (log_lik + log_prior)
        log_u = np.log(gen.random())
        accepted = bool(log_u < log_alpha)
        if accepted:
            theta, log_lik, log_prior = proposal, prop_log_lik, prop_log_prior
            n_accept += 1
        chain.append(ChainState(theta, log_lik, log_prior, accepted))
    return PmhResult(chain, n_accept / config.chain_length, n_calls)


def run_pmh(
    model: StateSpaceModel,
    prior: Gaussian,
    observations,
    config: PmhConfig,
    rng: RngStream,
) -> PmhResult:
    """Run the chain with bootstrap-filter likelihood estimates."""
    loglik = ParticleFilterLikelihood(model, observations, config.n_particles)
    return run_pmh_loglik(loglik, prior, config, rng)


def _chain_thetas(chain) -> np.ndarray:
    if len(chain) and isinstance(chain[0], ChainState):
        return np.asarray([state.theta for state in chain])
    return np.atleast_2d(np.asarray(chain, dtype=float).T).T


def pmh_posterior_mean(chain, burn_in_fraction: float = 0.5) -> np.ndarray:
    """Arithmetic mean of the post-burn-in chain states."""
    thetas = _chain_thetas(chain)
    start = math.floor(len(thetas) * burn_in_fraction)
    if start >= len(thetas):
        raise ValueError("burn-in leaves no samples")
    return thetas[start:].mean(axis=0)


def save_chain(path, chain) -> None:
    """Write a chain as CSV: step index, theta components, log-lik, accepted flag."""
    dim = chain[0].theta.size
    columns = ["step"] + [f"theta_{i}" for i in range(dim)] + ["log_lik", "accepted"]
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for step, state in enumerate(chain):
            fields = [str(step)]
            fields += [repr(float(v)) for v in state.theta]
            fields.append(repr(float(state.log_lik)))
            fields.append("1" if state.accepted else "0")
            fh.write(",".join(fields) + "\n")


def load_chain(path) -> list[ChainState]:
    """Read a chain written by :func:`save_chain` (prior density not stored)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    dim = sum(1 for name in header if name.startswith("theta_"))
    chain = []
    for row in rows:
        theta = np.array([float(v) for v in row[1 : 1 + dim]])
        chain.append(
            ChainState(theta, float(row[1 + dim]), float("nan"), row[2 + dim] == "1")
        )
    return chain
