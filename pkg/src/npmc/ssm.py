"""State-space model interface and a linear-Gaussian model with exact likelihood.

A model describes a latent Markov chain ``x_0, x_1, ...`` observed through
noisy measurements ``y_1, y_2, ...``.  Implementations are vectorized over
particles: states are ``(n, d_x)`` arrays.  The linear-Gaussian model here
exists mainly as a test oracle, since its marginal likelihood is computed
exactly by the Kalman filter.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .numerics import NumericalError, RngStream, _LOG_2PI

__all__ = ["StateSpaceModel", "LinearGaussianModel", "kalman_log_likelihood"]


class StateSpaceModel(ABC):
    """Behavioral contract shared by all state-space models.

    Subclasses define the prior over the initial state, the Markov
    transition kernel (which may depend on a static parameter vector
    ``theta`` and the 1-based time index) and the observation log-density.
    All methods are pure given an explicit :class:`RngStream`; instances
    are immutable after construction and safe to share across workers.
    """

    d_x: int
    d_y: int

    @abstractmethod
    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        """Draw ``n`` initial states, shape ``(n, d_x)``."""

    @abstractmethod
    def sample_transition(
        self, states: np.ndarray, theta: np.ndarray, t: int, rng: RngStream
    ) -> np.ndarray:
        """Propagate ``(n, d_x)`` states one step through the Markov kernel."""

    @abstractmethod
    def obs_log_lik(
        self, y: np.ndarray, states: np.ndarray, theta: np.ndarray
    ) -> np.ndarray:
        """Per-state log-density of observation ``y``, shape ``(n,)``."""


@dataclass(eq=False)
class LinearGaussianModel(StateSpaceModel):
    """Linear-Gaussian state-space model ``x' = A x + u``, ``y = H x + B theta + v``.

    ``u ~ N(0, Q)`` and ``v ~ N(0, W)``; the initial state is
    ``N(prior_mean, prior_cov)``.  The optional ``obs_shift`` matrix ``B``
    injects the static parameter into the observation mean, keeping the
    model conjugate so exact posteriors stay available for testing.
    """

    transition: np.ndarray
    transition_cov: np.ndarray
    observation: np.ndarray
    observation_cov: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    obs_shift: np.ndarray | None = None

    _chol_q: np.ndarray = field(init=False, repr=False)
    _chol_w: np.ndarray = field(init=False, repr=False)
    _chol_p0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.transition = np.atleast_2d(np.asarray(self.transition, dtype=float))
        self.transition_cov = np.atleast_2d(np.asarray(self.transition_cov, dtype=float))
        self.observation = np.atleast_2d(np.asarray(self.observation, dtype=float))
        self.observation_cov = np.atleast_2d(np.asarray(self.observation_cov, dtype=float))
        self.prior_mean = np.atleast_1d(np.asarray(self.prior_mean, dtype=float))
        self.prior_cov = np.atleast_2d(np.asarray(self.prior_cov, dtype=float))
        if self.obs_shift is not None:
            self.obs_shift = np.atleast_2d(np.asarray(self.obs_shift, dtype=float))
        self.d_x = self.transition.shape[0]
        self.d_y = self.observation.shape[0]
        self._chol_q = _chol_psd(self.transition_cov)
        self._chol_w = np.linalg.cholesky(self.observation_cov)
        self._chol_p0 = _chol_psd(self.prior_cov)

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        z = rng.generator.standard_normal((n, self.d_x))
        return self.prior_mean + z @ self._chol_p0.T

    def sample_transition(self, states, theta, t, rng: RngStream) -> np.ndarray:
        z = rng.generator.standard_normal(states.shape)
        return self.transition_given_noise(states, z, t)

    def transition_given_noise(self, states, noise, t) -> np.ndarray:
        """Transition with externally drawn standard-normal noise ``(n, d_x)``."""
        return states @ self.transition.T + noise @ self._chol_q.T

    def _residual_log_lik(self, resid: np.ndarray) -> np.ndarray:
        z = np.linalg.solve(self._chol_w, resid.T)
        log_det = 2.0 * np.log(np.diag(self._chol_w)).sum()
        return -0.5 * (self.d_y * _LOG_2PI + log_det + (z * z).sum(axis=0))

    def obs_log_lik(self, y, states, theta) -> np.ndarray:
        resid = y - states @ self.observation.T
        if self.obs_shift is not None:
            resid = resid - self.obs_shift @ theta
        return self._residual_log_lik(resid)

    def obs_log_lik_multi(self, y, states, thetas) -> np.ndarray:
        """Like :meth:`obs_log_lik` but with one parameter row per state."""
        resid = y - states @ self.observation.T
        if self.obs_shift is not None:
            resid = resid - thetas @ self.obs_shift.T
        return self._residual_log_lik(resid)


def _chol_psd(cov: np.ndarray) -> np.ndarray:
    # Q or P0 may be exactly singular (deterministic dynamics); fall back to
    # an eigenvalue square root in that case.
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        if (vals < -1e-12 * max(1.0, vals.max(initial=0.0))).any():
            raise NumericalError("covariance has negative eigenvalues")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def kalman_log_likelihood(
    model: LinearGaussianModel, observations, theta: np.ndarray | None = None
) -> float:
    """Exact log-likelihood of the observations under a linear-Gaussian model.

    Runs the standard predict/update recursion, accumulating each step's
    innovation log-density.  An empty observation sequence yields 0.  A
    non-positive-definite innovation covariance raises
    :class:`NumericalError`.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if obs.size == 0:
        return 0.0
    if obs.shape[1] != model.d_y:
        raise ValueError(
            f"observations have dimension {obs.shape[1]}, model d_y={model.d_y}"
        )
    shift = np.zeros(model.d_y)
    if model.obs_shift is not None and theta is not None:
        shift = model.obs_shift @ np.asarray(theta, dtype=float)
    a, q = model.transition, model.transition_cov
    h, w = model.observation, model.observation_cov
    m, p = model.prior_mean.copy(), model.prior_cov.copy()
    total = 0.0
    for y in obs:
        m = a @ m
        p = a @ p @ a.T + q
        innov = y - (h @ m + shift)
        s = h @ p @ h.T + w
        try:
            chol_s = np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("innovation covariance is not positive definite") from exc
        z = np.linalg.solve(chol_s, innov)
        total += -0.5 * (
            model.d_y * _LOG_2PI + 2.0 * np.log(np.diag(chol_s)).sum() + z @ z
        )
        gain = p @ h.T @ np.linalg.inv(s)
        m = m + gain @ innov
        p = p - gain @ h @ p
        p = 0.5 * (p + p.T)
    return float(total)
