"""Seeded verification suites runnable from the command line.

Each suite re-checks one family of correctness properties with fixed seeds
and reports human-readable pass/fail lines; the CLI maps a failing suite
to a nonzero exit status.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DegenerateWeights, RngStream, normalize_log_weights
from .particle_filter import run_bootstrap_filter
from .pmc import clip_weights
from .ssm import LinearGaussianModel, kalman_log_likelihood
from .tracking import REGION_HALF, TrackingModel, TrackingParams, reflect

__all__ = ["VerifyReport", "SUITES", "run_suite"]


@dataclass
class VerifyReport:
    suite: str
    passed: bool
    lines: list[str] = field(default_factory=list)

    def check(self, label: str, ok: bool, detail: str = "") -> None:
        self.passed = self.passed and ok
        status = "pass" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        self.lines.append(f"  [{status}] {label}{suffix}")


def _sort_oracle(raw: np.ndarray, clip_count: int) -> np.ndarray:
    # Order statistics by full descending sort, then flatten everything at
    # or above the clip threshold.
    threshold = np.sort(raw)[::-1][clip_count - 1]
    return np.where(raw >= threshold, threshold, raw)


def _verify_clipping(seed: int) -> VerifyReport:
    report = VerifyReport("clipping", True)
    gen = RngStream(seed, 17).generator
    n_cases = 10_000
    bad_monotone = bad_below = bad_idempotent = bad_oracle = bad_ceiling = 0
    for _ in range(n_cases):
        size = int(gen.integers(1, 200))
        raw = gen.standard_normal(size) * 10.0
        if size >= 4 and gen.random() < 0.3:
            raw[gen.integers(0, size, size // 4)] = raw[0]  # inject ties
        if gen.random() < 0.1:
            raw[gen.integers(0, size)] = -np.inf
        clip_count = int(gen.integers(1, size + 1))
        clipped = clip_weights(raw, clip_count)
        threshold = np.sort(raw)[::-1][clip_count - 1]
        if (clipped > raw + 1e-15).any():
            bad_monotone += 1
        below = raw < threshold
        if not np.array_equal(clipped[below], raw[below]):
            bad_below += 1
        if not np.array_equal(clip_weights(clipped, clip_count), clipped):
            bad_idempotent += 1
        if not np.array_equal(clipped, _sort_oracle(raw, clip_count)):
            bad_oracle += 1
        try:
            weights = normalize_log_weights(clipped)
            if weights.max() > 1.0 / clip_count + 1e-12:
                bad_ceiling += 1
        except DegenerateWeights:
            pass
    report.check(f"never increases a weight over {n_cases} cases", bad_monotone == 0)
    report.check("weights below the threshold unchanged", bad_below == 0)
    report.check("idempotent", bad_idempotent == 0)
    report.check("matches full-sort oracle", bad_oracle == 0)
    report.check("normalized ceiling 1/clip_count", bad_ceiling == 0)
    raw = RngStream(seed, 18).generator.standard_normal(500)
    report.check(
        "clip_count=1 is the identity", np.array_equal(clip_weights(raw, 1), raw)
    )
    return report


def _verify_reflection(seed: int) -> VerifyReport:
    report = VerifyReport("reflection", True)
    model = TrackingModel(TrackingParams.ground_truth())
    rng = RngStream(seed, 23)
    state = model.sample_prior(1, rng)
    steps = 100_000
    worst = 0.0
    theta = model.params.theta
    for t in range(steps):
        state = model.sample_transition(state, theta, t + 1, rng)
        worst = max(
            worst,
            abs(state[0, 0]) - REGION_HALF[0],
            abs(state[0, 1]) - REGION_HALF[1],
        )
    report.check(f"containment over {steps} steps", worst <= 0.0, f"max excess {worst:.2e}")

    gen = RngStream(seed, 24).generator
    n_cases = 2000
    bad_mirror = bad_speed = bad_involution = 0
    for _ in range(n_cases):
        prev = (gen.random(2) * 2.0 - 1.0) * (REGION_HALF - 0.5)
        # step beyond exactly one wall
        axis = int(gen.integers(0, 2))
        sign = 1.0 if gen.random() < 0.5 else -1.0
        prop = prev.copy()
        prop[axis] = sign * (REGION_HALF[axis] + gen.random() * 0.5 + 1e-3)
        prop[1 - axis] += gen.standard_normal() * 0.05
        vel = prop - prev
        pos, new_vel = reflect(prev, prop, vel)
        wall = sign * REGION_HALF[axis]
        mirrored = prop.copy()
        mirrored[axis] = 2.0 * wall - prop[axis]
        if np.abs(pos - mirrored).max() > 1e-10:
            bad_mirror += 1
        if abs(np.hypot(*new_vel) - np.hypot(*vel)) > 1e-12:
            bad_speed += 1
        back = pos.copy()
        back[axis] = 2.0 * wall - pos[axis]
        if np.abs(back - prop).max() > 1e-10:
            bad_involution += 1
    report.check(f"mirror oracle on {n_cases} single-wall cases", bad_mirror == 0)
    report.check("speed preserved to 1e-12", bad_speed == 0)
    report.check("mirroring back recovers the proposal", bad_involution == 0)
    return report


def _verify_unbiasedness(seed: int) -> VerifyReport:
    report = VerifyReport("unbiasedness", True)
    model = LinearGaussianModel(
        transition=[[0.8]],
        transition_cov=[[0.1]],
        observation=[[1.0]],
        observation_cov=[[1.0]],
        prior_mean=[0.0],
        prior_cov=[[1.0]],
    )
    horizon = 20
    data_rng = RngStream(seed, 31)
    observations = _simulate_linear_gaussian(model, horizon, data_rng)
    theta = np.zeros(1)
    exact = kalman_log_likelihood(model, observations)
    replicates = 400
    base = RngStream(seed, 32)
    for n_particles in (10, 50, 400):
        ratios = np.empty(replicates)
        for r in range(replicates):
            est = run_bootstrap_filter(
                model, theta, observations, n_particles, base.derive(n_particles, r)
            )
            ratios[r] = np.exp(est.log_value - exact)
        mean = ratios.mean()
        se = ratios.std(ddof=1) / np.sqrt(replicates)
        report.check(
            f"mean likelihood ratio at N={n_particles} within 4 SE of 1",
            abs(mean - 1.0) <= 4.0 * se,
            f"mean={mean:.4f} se={se:.4f}",
        )
    return report


def _simulate_linear_gaussian(model: LinearGaussianModel, horizon: int, rng: RngStream):
    state = model.sample_prior(1, rng)
    gen = rng.generator
    chol_w = np.linalg.cholesky(model.observation_cov)
    out = np.empty((horizon, model.d_y))
    for t in range(horizon):
        state = state @ model.transition.T + gen.standard_normal(
            (1, model.d_x)
        ) @ np.linalg.cholesky(model.transition_cov).T
        out[t] = state @ model.observation.T + gen.standard_normal(model.d_y) @ chol_w.T
    return out


def _verify_rate(seed: int) -> VerifyReport:
    # Monte Carlo error of the clipped-importance posterior mean should
    # shrink like M^(-1/2) on a conjugate toy with exact likelihood.
    from .numerics import Gaussian
    from .pmc import SamplerConfig, posterior_mean, sample_cloud

    report = VerifyReport("rate", True)
    prior = Gaussian([0.0], [[1.0]])
    obs_value, obs_var = 0.7, 1.0
    post_var = 1.0 / (1.0 / 1.0 + 1.0 / obs_var)
    post_mean = post_var * obs_value / obs_var

    def loglik(thetas, streams):
        resid = thetas[:, 0] - obs_value
        return -0.5 * (resid**2 / obs_var + np.log(2.0 * np.pi * obs_var))

    m_grid = (100, 1000, 10000)
    replicates = 100
    rmse = []
    for m in m_grid:
        errors = np.empty(replicates)
        for r in range(replicates):
            config = SamplerConfig(n_samples=m, n_iterations=0, n_particles=1)
            cloud = sample_cloud(
                loglik, prior, None, config, RngStream(seed, 41).derive(m, r), 0
            )
            errors[r] = (posterior_mean(cloud)[0] - post_mean) ** 2
        rmse.append(np.sqrt(errors.mean()))
    slope = np.polyfit(np.log(m_grid), np.log(rmse), 1)[0]
    report.check(
        "log-log RMSE slope in [-0.65, -0.35]",
        -0.65 <= slope <= -0.35,
        f"slope={slope:.3f} rmse={['%.2e' % v for v in rmse]}",
    )
    return report


SUITES = {
    "clipping": _verify_clipping,
    "reflection": _verify_reflection,
    "unbiasedness": _verify_unbiasedness,
    "rate": _verify_rate,
}


def run_suite(name: str, seed: int = 20240901) -> VerifyReport:
    """Run one named suite (or all of them) with a fixed seed."""
    if name == "all":
        merged = VerifyReport("all", True)
        for key in SUITES:
            sub = SUITES[key](seed)
            merged.passed = merged.passed and sub.passed
            merged.lines.append(f"{key}:")
            merged.lines.extend(sub.lines)
        return merged
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name](seed)
