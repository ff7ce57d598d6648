import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npmc import (
    NumericalError,
    RngStream,
    SensorGrid,
    TrackingModel,
    TrackingParams,
    load_dataset,
    reflect,
    save_dataset,
    simulate_dataset,
)
from npmc.tracking import REGION_HALF

LN_2PI = np.log(2.0 * np.pi)


def noiseless_params(**overrides):
    return TrackingParams.ground_truth(
        sigma_u2=0.0, sigma_z2=0.0, sigma_eps2=overrides.pop("sigma_eps2", 0.0), **overrides
    )


class TestPrior:
    def test_position_mean_near_center(self, rng):
        model = TrackingModel(TrackingParams.ground_truth())
        draws = model.sample_prior(10**5, rng)
        assert np.abs(draws[:, :2].mean(axis=0)).max() < 0.15

    def test_left_half_fraction(self, rng):
        model = TrackingModel(TrackingParams.ground_truth())
        draws = model.sample_prior(10**5, rng.derive(1))
        assert (draws[:, 0] < 0).mean() == pytest.approx(0.5, abs=0.005)

    def test_velocity_variance(self, rng):
        model = TrackingModel(TrackingParams.ground_truth())
        draws = model.sample_prior(10**5, rng.derive(2))
        assert np.abs(draws[:, 2:].var(axis=0) - 0.05).max() < 0.002


class TestTransition:
    def test_center_rest_is_fixed_point(self, rng):
        model = TrackingModel(noiseless_params())
        state = np.zeros((1, 4))
        out = model.sample_transition(state, model.params.theta, 1, rng)
        assert np.array_equal(out, state)

    def test_deterministic_drift(self, rng):
        model = TrackingModel(noiseless_params())
        state = np.array([[0.0, 5.0, 0.0, 1.0]])
        out = model.sample_transition(state, model.params.theta, 1, rng)
        assert np.allclose(out, [[0.0, 6.0, 0.0, 1.0]])

    def test_long_run_containment(self, rng):
        model = TrackingModel(TrackingParams.ground_truth())
        state = model.sample_prior(1, rng)
        for t in range(10_000):
            state = model.sample_transition(state, model.params.theta, t + 1, rng)
            assert (np.abs(state[0, :2]) <= REGION_HALF).all()

    def test_batch_matches_scalar_reflection(self, rng):
        # the vectorized single-wall mirror must agree with the reference
        model = TrackingModel(TrackingParams.ground_truth())
        gen = rng.generator
        n = 500
        prev = np.empty((n, 4))
        prev[:, 0] = (gen.random(n) * 2.0 - 1.0) * 19.5
        prev[:, 1] = (gen.random(n) * 2.0 - 1.0) * 9.5
        prev[:, 2:] = gen.standard_normal((n, 2))
        proposed = prev.copy()
        axis = gen.integers(0, 2, n)
        for i in range(n):
            a = axis[i]
            sign = 1.0 if gen.random() < 0.5 else -1.0
            proposed[i, a] = sign * (REGION_HALF[a] + 0.01 + gen.random())
            proposed[i, 1 - a] += gen.standard_normal() * 0.1
            proposed[i, 2:] = gen.standard_normal(2)
        fast = proposed.copy()
        model._bounce_outside(prev, fast)
        for i in range(n):
            pos, vel = reflect(prev[i, :2], proposed[i, :2], proposed[i, 2:])
            assert np.abs(fast[i, :2] - pos).max() < 1e-12
            assert np.abs(fast[i, 2:] - vel).max() < 1e-12


class TestReflect:
    def test_mirror_across_top_wall(self):
        pos, vel = reflect([0.0, 9.0], [0.0, 11.0], [0.0, 2.0])
        assert np.allclose(pos, [0.0, 9.0], atol=1e-12)  # 2*10 - 11
        assert np.allclose(vel, [0.0, -2.0], atol=1e-12)

    def test_mirror_across_right_wall(self):
        pos, vel = reflect([19.0, 0.0], [21.0, 0.0], [2.0, 0.0])
        assert np.allclose(pos, [19.0, 0.0], atol=1e-12)  # 2*20 - 21
        assert np.allclose(vel, [-2.0, 0.0], atol=1e-12)

    def test_involution_on_mirrored_component(self):
        prev = np.array([3.0, 8.5])
        proposed = np.array([3.4, 10.7])
        pos, _ = reflect(prev, proposed, proposed - prev)
        back = pos.copy()
        back[1] = 2.0 * 10.0 - pos[1]
        assert np.abs(back - proposed).max() < 1e-10

    @given(
        px=st.floats(-19.0, 19.0),
        py=st.floats(-9.0, 9.0),
        dx=st.floats(-4.0, 4.0),
        dy=st.floats(0.5, 4.0),
        vx=st.floats(-3.0, 3.0),
        vy=st.floats(-3.0, 3.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_speed_preserved(self, px, py, dx, dy, vx, vy):
        prev = np.array([px, py])
        proposed = np.array([px + dx, py + 10.5 + dy - py])  # beyond the top wall
        velocity = np.array([vx, vy])
        pos, vel = reflect(prev, proposed, velocity)
        assert (np.abs(pos) <= REGION_HALF + 1e-12).all()
        assert abs(np.hypot(*vel) - np.hypot(*velocity)) < 1e-12

    def test_double_reflection_near_corner(self):
        pos, vel = reflect([19.5, 9.5], [20.7, 10.6], [1.2, 1.1])
        assert (np.abs(pos) <= REGION_HALF).all()
        assert abs(np.hypot(*vel) - np.hypot(1.2, 1.1)) < 1e-12

    def test_pathological_step_raises(self):
        with pytest.raises(NumericalError):
            reflect([0.0, 0.0], [1.0e4, 4987.6], [1.0, 0.5])


class TestObservationLogLik:
    def test_far_distance_saturates_at_sensitivity(self):
        model = TrackingModel(TrackingParams.ground_truth())
        mean = model.observation_mean(np.array([[1e6, 1e6]]), model.params.theta)
        assert np.abs(mean - 10.0 * np.log10(1e-5)).max() < 1e-6

    def test_exact_observation_hits_gaussian_mode(self):
        params = TrackingParams.ground_truth()
        model = TrackingModel(params)
        state = np.array([[3.0, -2.0, 0.0, 0.0]])
        y = model.observation_mean(state[:, :2], params.theta)[0]
        value = model.obs_log_lik(y, state, params.theta)[0]
        expected = -0.5 * model.d_y * np.log(2.0 * np.pi * params.sigma_eps2)
        assert value == pytest.approx(expected, abs=1e-12)

    def test_matches_per_sensor_oracle(self, rng):
        params = TrackingParams.ground_truth()
        model = TrackingModel(params)
        gen = rng.generator
        states = model.sample_prior(5, rng)
        theta = np.array([-0.1, 2.5, -10.0])
        log_pt, nu, log_rho = theta
        for i in range(5):
            y = model.observation_mean(states[i : i + 1, :2], theta)[0]
            y = y + gen.standard_normal(model.d_y)
            total = 0.0
            for j, s in enumerate(model.sensors.positions):
                dist = max(np.linalg.norm(states[i, :2] - s), 1e-6)
                mean = 10.0 * np.log10(np.exp(log_pt) / dist**nu + np.exp(log_rho))
                total += -0.5 * (
                    np.log(2.0 * np.pi * params.sigma_eps2)
                    + (y[j] - mean) ** 2 / params.sigma_eps2
                )
            got = model.obs_log_lik(y, states[i : i + 1], theta)[0]
            assert got == pytest.approx(total, abs=1e-12)

    def test_multi_theta_matches_single(self, rng):
        params = TrackingParams.ground_truth()
        model = TrackingModel(params)
        states = model.sample_prior(6, rng)
        thetas = np.column_stack(
            [
                rng.generator.normal(-0.1, 0.3, 6),
                rng.generator.normal(3.0, 0.5, 6),
                rng.generator.normal(-11.0, 0.3, 6),
            ]
        )
        y = rng.generator.standard_normal(model.d_y) - 40.0
        multi = model.obs_log_lik_multi(y, states, thetas)
        for i in range(6):
            single = model.obs_log_lik(y, states[i : i + 1], thetas[i])[0]
            assert multi[i] == pytest.approx(single, abs=1e-12)

    def test_joint_permutation_invariance(self, rng):
        params = TrackingParams.ground_truth()
        model = TrackingModel(params)
        perm = rng.generator.permutation(model.d_y)
        permuted_model = TrackingModel(
            params, SensorGrid(model.sensors.positions[perm])
        )
        states = model.sample_prior(4, rng.derive(1))
        y = rng.generator.standard_normal(model.d_y) - 40.0
        base = model.obs_log_lik(y, states, params.theta)
        permuted = permuted_model.obs_log_lik(y[perm], states, params.theta)
        assert np.abs(base - permuted).max() < 1e-10


class TestSimulateDataset:
    def test_output_shape(self, rng):
        obs, traj = simulate_dataset(
            TrackingParams.ground_truth(), SensorGrid.default(), 50, rng
        )
        assert obs.shape == (50, 16)
        assert traj.shape == (51, 4)

    def test_symmetric_sensors_identical_readings(self, rng):
        params = noiseless_params()
        obs, _ = simulate_dataset(
            params,
            SensorGrid.default(),
            3,
            rng,
            initial_state=np.zeros(4),
        )
        # the 4x4 grid is 4-fold symmetric about the center, so a centered
        # target sees only 4 distinct readings, each 4 times
        distances = np.linalg.norm(SensorGrid.default().positions, axis=1).round(9)
        for d in np.unique(distances):
            group = obs[:, distances == d]
            assert np.ptp(group, axis=1).max() < 1e-12

    def test_fixed_seed_bit_identical(self):
        params = TrackingParams.ground_truth()
        a, _ = simulate_dataset(params, SensorGrid.default(), 10, RngStream(5, 1))
        b, _ = simulate_dataset(params, SensorGrid.default(), 10, RngStream(5, 1))
        assert np.array_equal(a, b)

    def test_invalid_horizon(self, rng):
        with pytest.raises(ValueError):
            simulate_dataset(TrackingParams.ground_truth(), SensorGrid.default(), 0, rng)

    def test_save_load_round_trip(self, rng, tmp_path):
        params = TrackingParams.ground_truth()
        sensors = SensorGrid.default()
        obs, _ = simulate_dataset(params, sensors, 7, rng)
        path = tmp_path / "dataset.txt"
        save_dataset(path, obs, sensors, params.theta, seed=991)
        loaded, meta = load_dataset(path)
        assert np.array_equal(loaded, obs)
        assert meta["J"] == 16 and meta["m"] == 7 and meta["seed"] == 991
        assert np.array_equal(meta["sensors"].positions, sensors.positions)
        assert np.array_equal(meta["theta"], params.theta)


class TestSensorGrid:
    def test_default_grid(self):
        grid = SensorGrid.default()
        assert grid.count == 16
        assert (np.abs(grid.positions[:, 0]) < 20).all()
        assert (np.abs(grid.positions[:, 1]) < 10).all()

    def test_rejects_sensor_outside(self):
        with pytest.raises(ValueError):
            SensorGrid([[20.0, 0.0]])
