import numpy as np
import pytest
from scipy.stats import multivariate_normal

from npmc import (
    LinearGaussianModel,
    NumericalError,
    RngStream,
    kalman_log_likelihood,
)
from npmc.verify import _simulate_linear_gaussian


def joint_gaussian_log_lik(model, observations, theta=None):
    """Oracle: marginalize the latent chain into one big Gaussian over all y."""
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    horizon, d_y = obs.shape
    a, q = model.transition, model.transition_cov
    h, w = model.observation, model.observation_cov
    shift = np.zeros(d_y)
    if model.obs_shift is not None and theta is not None:
        shift = model.obs_shift @ theta
    means, covs = [], {}
    mean_x = model.prior_mean.copy()
    cov_x = model.prior_cov.copy()
    per_step_cov = []
    for _ in range(horizon):
        mean_x = a @ mean_x
        cov_x = a @ cov_x @ a.T + q
        means.append(h @ mean_x + shift)
        per_step_cov.append(cov_x)
    powers = [np.eye(model.d_x)]
    for _ in range(horizon):
        powers.append(a @ powers[-1])
    big_mean = np.concatenate(means)
    big_cov = np.zeros((horizon * d_y, horizon * d_y))
    for i in range(horizon):
        for j in range(i, horizon):
            cross = per_step_cov[i] @ powers[j - i].T
            block = h @ cross @ h.T
            if i == j:
                block = block + w
            big_cov[i * d_y : (i + 1) * d_y, j * d_y : (j + 1) * d_y] = block
            big_cov[j * d_y : (j + 1) * d_y, i * d_y : (i + 1) * d_y] = block.T
    return multivariate_normal.logpdf(obs.ravel(), big_mean, big_cov)


def _random_model(gen, d_x, d_y, with_shift=False):
    a = gen.standard_normal((d_x, d_x)) * 0.4
    q_root = gen.standard_normal((d_x, d_x))
    h = gen.standard_normal((d_y, d_x))
    w_root = gen.standard_normal((d_y, d_y))
    return LinearGaussianModel(
        transition=a,
        transition_cov=q_root @ q_root.T + 0.3 * np.eye(d_x),
        observation=h,
        observation_cov=w_root @ w_root.T + 0.3 * np.eye(d_y),
        prior_mean=gen.standard_normal(d_x),
        prior_cov=np.eye(d_x),
        obs_shift=np.eye(d_y, 1) if with_shift else None,
    )


class TestKalmanLogLikelihood:
    def test_static_state_closed_form(self):
        # A=1, Q=0: every y_n = x0 + noise; conjugate scalar recursion oracle
        m0, p0, w = 0.3, 2.0, 0.7
        model = LinearGaussianModel(
            transition=[[1.0]],
            transition_cov=[[0.0]],
            observation=[[1.0]],
            observation_cov=[[w]],
            prior_mean=[m0],
            prior_cov=[[p0]],
        )
        obs = np.array([[0.1], [0.9], [-0.4], [0.6]])
        expected = 0.0
        mean, var = m0, p0
        for y in obs[:, 0]:
            expected += -0.5 * (
                np.log(2.0 * np.pi * (var + w)) + (y - mean) ** 2 / (var + w)
            )
            gain = var / (var + w)
            mean = mean + gain * (y - mean)
            var = var * (1.0 - gain)
        assert kalman_log_likelihood(model, obs) == pytest.approx(expected, abs=1e-10)

    def test_empty_sequence(self):
        model = _random_model(np.random.default_rng(0), 2, 1)
        assert kalman_log_likelihood(model, np.empty((0, 1))) == 0.0

    def test_matches_joint_gaussian_oracle_2d(self):
        gen = np.random.default_rng(11)
        model = _random_model(gen, 2, 2)
        obs = _simulate_linear_gaussian(model, 20, RngStream(3))
        assert kalman_log_likelihood(model, obs) == pytest.approx(
            joint_gaussian_log_lik(model, obs), abs=1e-8
        )

    @pytest.mark.parametrize("case", range(8))
    def test_matches_joint_gaussian_oracle_randomized(self, case):
        gen = np.random.default_rng(100 + case)
        d_x = int(gen.integers(1, 4))
        d_y = int(gen.integers(1, 4))
        horizon = int(gen.integers(1, 21))
        model = _random_model(gen, d_x, d_y)
        obs = _simulate_linear_gaussian(model, horizon, RngStream(200 + case))
        assert kalman_log_likelihood(model, obs) == pytest.approx(
            joint_gaussian_log_lik(model, obs), abs=1e-8
        )

    def test_observation_shift_matches_shifted_data(self):
        gen = np.random.default_rng(5)
        model = _random_model(gen, 2, 1, with_shift=True)
        obs = _simulate_linear_gaussian(model, 10, RngStream(9))
        theta = np.array([0.8])
        shifted = obs - (model.obs_shift @ theta)
        assert kalman_log_likelihood(model, obs, theta) == pytest.approx(
            kalman_log_likelihood(model, shifted), abs=1e-10
        )

    def test_dimension_mismatch(self):
        model = _random_model(np.random.default_rng(1), 2, 2)
        with pytest.raises(ValueError):
            kalman_log_likelihood(model, np.zeros((5, 3)))

    def test_non_pd_innovation_raises(self):
        model = _random_model(np.random.default_rng(2), 1, 1)
        model.observation_cov = np.array([[-5.0]])  # force a broken innovation
        obs = np.zeros((3, 1))
        with pytest.raises(NumericalError):
            kalman_log_likelihood(model, obs)


class TestLinearGaussianModel:
    def test_prior_moments(self, rng):
        model = LinearGaussianModel(
            transition=[[1.0]],
            transition_cov=[[1.0]],
            observation=[[1.0]],
            observation_cov=[[1.0]],
            prior_mean=[2.0],
            prior_cov=[[4.0]],
        )
        draws = model.sample_prior(200_000, rng)
        assert draws.mean() == pytest.approx(2.0, abs=0.02)
        assert draws.var() == pytest.approx(4.0, rel=0.03)

    def test_obs_log_lik_matches_density(self, rng):
        gen = np.random.default_rng(3)
        model = _random_model(gen, 2, 2, with_shift=True)
        states = gen.standard_normal((6, 2))
        theta = np.array([0.4])
        y = gen.standard_normal(2)
        got = model.obs_log_lik(y, states, theta)
        for i in range(6):
            mean = model.observation @ states[i] + (model.obs_shift @ theta)
            expected = multivariate_normal.logpdf(y, mean, model.observation_cov)
            assert got[i] == pytest.approx(expected, abs=1e-10)

    def test_obs_log_lik_multi_matches_single(self):
        gen = np.random.default_rng(4)
        model = _random_model(gen, 2, 2, with_shift=True)
        states = gen.standard_normal((5, 2))
        thetas = gen.standard_normal((5, 1))
        y = gen.standard_normal(2)
        multi = model.obs_log_lik_multi(y, states, thetas)
        for i in range(5):
            single = model.obs_log_lik(y, states[i : i + 1], thetas[i])
            assert multi[i] == pytest.approx(single[0], abs=1e-12)
