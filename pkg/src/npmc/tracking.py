"""Target tracking over a bounded rectangle observed by an RSSI sensor grid.

The target state is position plus velocity in the closed rectangle
``R = [-20, 20] x [-10, 10]``.  Motion is linear-Gaussian while the
position stays inside ``R``; a step that would exit bounces back in by the
law of reflection.  Each of ``J`` sensors measures received signal power
in dB: ``y_j = 10 log10(P_t / ||r - s_j||^nu + rho) + noise``, so the
unknowns are ``theta = [log P_t, nu, log rho]`` (natural logs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import NumericalError, RngStream, _LOG_2PI
from .ssm import StateSpaceModel

__all__ = [
    "REGION_HALF",
    "TrackingParams",
    "SensorGrid",
    "TrackingModel",
    "reflect",
    "simulate_dataset",
    "save_dataset",
    "load_dataset",
]

REGION_HALF = np.array([20.0, 10.0])

# Corners ordered upper-right, upper-left, lower-left, lower-right; wall j
# joins corner j+1 (mod 4) to corner j: 0=top, 1=left, 2=bottom, 3=right.
_CORNERS = np.array([[20.0, 10.0], [-20.0, 10.0], [-20.0, -10.0], [20.0, -10.0]])
# Coordinate axis normal to each wall (0 = x, 1 = y).
_WALL_AXIS = (1, 0, 1, 0)

_TWO_PI = 2.0 * np.pi
_MAX_REFLECTIONS = 8
_DIST2_FLOOR = 1e-12  # squared distance floor, i.e. distance clamped at 1e-6
_LOG10_SCALE = 10.0 / np.log(10.0)
_EXP_CAP = 690.0  # keeps P_t / d^nu finite for extreme path-loss exponents

_VELOCITY_PRIOR_VAR = 1.0 / 20.0


@dataclass(frozen=True)
class TrackingParams:
    """Model parameters: the unknown triple plus known noise constants."""

    log_pt: float
    nu: float
    log_rho: float
    kappa: float = 1.0
    sigma_u2: float = 1e-2
    sigma_z2: float = 1e-2
    sigma_eps2: float = 1.0

    @classmethod
    def ground_truth(cls, **overrides) -> "TrackingParams":
        """Parameters used to generate synthetic data: P_t=0.8, nu=3, rho=1e-5."""
        return cls(
            log_pt=float(np.log(0.8)), nu=3.0, log_rho=float(np.log(1e-5)), **overrides
        )

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.log_pt, self.nu, self.log_rho])


@dataclass(frozen=True)
class SensorGrid:
    """Positions of the J sensors, all strictly inside the region."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != 2:
            raise ValueError("sensor positions must be 2-D points")
        if (np.abs(pos) >= REGION_HALF).any():
            raise ValueError("all sensors must lie strictly inside the region")
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def default(cls) -> "SensorGrid":
        """Uniform 4x4 grid covering the region (16 sensors)."""
        xs = np.array([-15.0, -5.0, 5.0, 15.0])
        ys = np.array([-7.5, -2.5, 2.5, 7.5])
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return cls(np.column_stack([gx.ravel(), gy.ravel()]))


def _inside(pos: np.ndarray) -> bool:
    return abs(pos[0]) <= REGION_HALF[0] and abs(pos[1]) <= REGION_HALF[1]


def reflect(prev_position, proposed_position, proposed_velocity):
    """Bounce a proposed move back into the region, mirror-style.

    ``prev_position`` must lie inside the region and ``proposed_position``
    outside.  The step is split at the wall it crosses, the outer part is
    mirrored across that wall, and the velocity is redirected along the
    mirrored segment with its magnitude preserved.  When the mirrored
    point is still outside, the bounce repeats (at most 8 times, then
    :class:`NumericalError`).  Corner hits resolve deterministically to
    the lower-indexed adjacent wall.
    """
    prev = np.asarray(prev_position, dtype=float)
    prop = np.asarray(proposed_position, dtype=float)
    vel = np.asarray(proposed_velocity, dtype=float)
    speed = float(np.hypot(vel[0], vel[1]))
    for _ in range(_MAX_REFLECTIONS):
        s = prop - prev
        q = _CORNERS - prev
        angles = np.arctan2(q[:, 1], q[:, 0]) % _TWO_PI
        angle_s = np.arctan2(s[1], s[0]) % _TWO_PI
        wall = None
        for j in range(4):
            width = (angles[(j + 1) % 4] - angles[j]) % _TWO_PI
            offset = (angle_s - angles[j]) % _TWO_PI
            if offset <= width:
                wall = j
                break
        if wall is None:
            raise NumericalError("reflection failed to identify a wall")
        axis = _WALL_AXIS[wall]
        if s[axis] == 0.0:
            raise NumericalError("degenerate step parallel to the crossed wall")
        lam = (_CORNERS[wall][axis] - prev[axis]) / s[axis]
        hit = prev + lam * s
        mirrored = (1.0 - lam) * s
        mirrored[axis] = -mirrored[axis]
        prop = hit + mirrored
        prev = hit
        if _inside(prop):
            norm = float(np.hypot(mirrored[0], mirrored[1]))
            return prop, (mirrored / norm) * speed
    raise NumericalError(
        f"more than {_MAX_REFLECTIONS} reflections in one step"
    )


class TrackingModel(StateSpaceModel):
    """State-space model for the bounced random walk with RSSI observations."""

    d_x = 4

    def __init__(self, params: TrackingParams, sensors: SensorGrid | None = None):
        self.params = params
        self.sensors = sensors if sensors is not None else SensorGrid.default()
        self.d_y = self.sensors.count
        k = params.kappa
        self._transition_matrix = np.array(
            [
                [1.0, 0.0, k, 0.0],
                [0.0, 1.0, 0.0, k],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        pos_std = float(np.sqrt(k * params.sigma_u2 + params.sigma_z2))
        vel_std = float(np.sqrt(params.sigma_u2))
        self._noise_std = np.array([pos_std, pos_std, vel_std, vel_std])
        self._sensor_sq = (self.sensors.positions**2).sum(axis=1)
        self._neg2_sensors_t = -2.0 * self.sensors.positions.T.copy()
        with np.errstate(divide="ignore"):
            # degenerate only under the zero-observation-noise test hook
            self._obs_norm = float(
                self.d_y * (_LOG_2PI + np.log(params.sigma_eps2))
            )
        self._inv_sigma_eps2 = (
            1.0 / params.sigma_eps2 if params.sigma_eps2 > 0 else np.inf
        )

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        gen = rng.generator
        states = np.empty((n, 4))
        states[:, :2] = (gen.random((n, 2)) * 2.0 - 1.0) * REGION_HALF
        states[:, 2:] = gen.standard_normal((n, 2)) * np.sqrt(_VELOCITY_PRIOR_VAR)
        return states

    def sample_transition(self, states, theta, t, rng: RngStream) -> np.ndarray:
        noise = rng.generator.standard_normal(states.shape)
        return self.transition_given_noise(states, noise, t)

    def transition_given_noise(self, states, noise, t) -> np.ndarray:
        """Transition with externally drawn standard-normal noise ``(n, 4)``."""
        out = states @ self._transition_matrix.T
        noise = noise * self._noise_std
        out += noise
        self._bounce_outside(states, out)
        return out

    def _bounce_outside(self, prev: np.ndarray, out: np.ndarray) -> None:
        # Vectorized mirror for the common single-wall crossing; anything
        # trickier (corner regions, mirrored point still outside) goes
        # through the scalar multi-bounce reflect().
        pos = out[:, :2]
        over = np.abs(pos) > REGION_HALF
        over_x, over_y = over[:, 0], over[:, 1]
        if not (over_x.any() or over_y.any()):
            return
        scalar = over_x & over_y
        for axis in (0, 1):
            single = (over[:, axis]) & ~(over[:, 1 - axis])
            if not single.any():
                continue
            idx = np.flatnonzero(single)
            step = pos[idx] - prev[idx, :2]
            wall = np.copysign(REGION_HALF[axis], pos[idx, axis])
            mirrored = 2.0 * wall - pos[idx, axis]
            ok = np.abs(mirrored) <= REGION_HALF[axis]
            if not ok.all():
                scalar[idx[~ok]] = True
                idx, step = idx[ok], step[ok]
                mirrored = mirrored[ok]
            speed = np.hypot(out[idx, 2], out[idx, 3])
            scale = speed / np.hypot(step[:, 0], step[:, 1])
            pos[idx, axis] = mirrored
            out[idx, 2 + axis] = -step[:, axis] * scale
            out[idx, 3 - axis] = step[:, 1 - axis] * scale
        for i in np.flatnonzero(scalar):
            new_pos, new_vel = reflect(prev[i, :2], out[i, :2], out[i, 2:])
            out[i, :2] = new_pos
            out[i, 2:] = new_vel

    def observation_mean(self, positions: np.ndarray, theta) -> np.ndarray:
        """Noise-free sensor readings in dB for ``(n, 2)`` positions."""
        log_pt, nu, log_rho = (float(v) for v in theta)
        pos = np.atleast_2d(positions)
        # ||r - s||^2 expanded so the cross term is a BLAS matmul.
        d2 = pos @ (-2.0 * self.sensors.positions.T)
        d2 += (pos * pos).sum(axis=1)[:, None]
        d2 += self._sensor_sq
        np.maximum(d2, _DIST2_FLOOR, out=d2)
        # 10*log10(P_t * d^-nu + rho); the received power is assembled in log
        # domain and capped so extreme exponents stay finite.
        np.log(d2, out=d2)
        d2 *= -0.5 * nu
        d2 += log_pt
        np.minimum(d2, _EXP_CAP, out=d2)
        np.exp(d2, out=d2)
        d2 += np.exp(log_rho)
        np.log(d2, out=d2)
        d2 *= _LOG10_SCALE
        return d2

    def obs_log_lik(self, y, states, theta) -> np.ndarray:
        resid = self.observation_mean(states[:, :2], theta)
        resid -= y
        maha = np.einsum("ij,ij->i", resid, resid)
        maha *= self._inv_sigma_eps2
        maha += self._obs_norm
        maha *= -0.5
        return maha

    def obs_log_lik_multi(self, y, states, thetas) -> np.ndarray:
        """Like :meth:`obs_log_lik` but with one parameter row per state."""
        pos = states[:, :2]
        d2 = pos @ self._neg2_sensors_t
        d2 += (pos * pos).sum(axis=1)[:, None]
        d2 += self._sensor_sq
        np.maximum(d2, _DIST2_FLOOR, out=d2)
        np.log(d2, out=d2)
        d2 *= (-0.5 * thetas[:, 1])[:, None]
        d2 += thetas[:, 0][:, None]
        np.minimum(d2, _EXP_CAP, out=d2)
        np.exp(d2, out=d2)
        d2 += np.exp(thetas[:, 2])[:, None]
        np.log(d2, out=d2)
        d2 *= _LOG10_SCALE
        d2 -= y
        maha = np.einsum("ij,ij->i", d2, d2)
        maha *= self._inv_sigma_eps2
        maha += self._obs_norm
        maha *= -0.5
        return maha


def simulate_dataset(
    params: TrackingParams,
    sensors: SensorGrid,
    horizon: int,
    rng: RngStream,
    initial_state: np.ndarray | None = None,
):
    """Simulate ``horizon`` observation vectors from the tracking model.

    Returns ``(observations, trajectory)`` with shapes ``(horizon, J)`` and
    ``(horizon + 1, 4)``.  The latent trajectory is returned for
    diagnostics only; the samplers never see it.  ``initial_state``
    overrides the prior draw (test hook).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    model = TrackingModel(params, sensors)
    theta = params.theta
    gen = rng.generator
    if initial_state is None:
        state = model.sample_prior(1, rng)
    else:
        state = np.asarray(initial_state, dtype=float).reshape(1, 4).copy()
    trajectory = np.empty((horizon + 1, 4))
    trajectory[0] = state[0]
    observations = np.empty((horizon, model.d_y))
    noise_std = float(np.sqrt(params.sigma_eps2))
    for n in range(1, horizon + 1):
        state = model.sample_transition(state, theta, n, rng)
        trajectory[n] = state[0]
        mean = model.observation_mean(state[:, :2], theta)[0]
        observations[n - 1] = mean + noise_std * gen.standard_normal(model.d_y)
    return observations, trajectory


def save_dataset(path, observations, sensors: SensorGrid, theta, seed: int) -> None:
    """Write observations as plain text, one row per time step.

    The header records the sensor count, horizon, sensor coordinates,
    ground-truth parameters and the generating seed.
    """
    obs = np.asarray(observations, dtype=float)
    m, j = obs.shape
    coords = ";".join(f"{float(x)!r},{float(y)!r}" for x, y in sensors.positions)
    theta_txt = ",".join(repr(float(v)) for v in np.asarray(theta))
    header = (
        "tracking-dataset\n"
        f"J={j}\n"
        f"m={m}\n"
        f"seed={seed}\n"
        f"sensors={coords}\n"
        f"theta={theta_txt}"
    )
    np.savetxt(path, obs, header=header)


def load_dataset(path):
    """Read a dataset written by :func:`save_dataset`.

    Returns ``(observations, meta)`` where ``meta`` has keys ``J``, ``m``,
    ``seed``, ``sensors`` (a :class:`SensorGrid`) and ``theta``.
    """
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            text = line[1:].strip()
            if "=" not in text:
                continue
            key, value = text.split("=", 1)
            meta[key.strip()] = value.strip()
    obs = np.loadtxt(path, ndmin=2)
    sensors = SensorGrid(
        np.array(
            [[float(c) for c in pair.split(",")] for pair in meta["sensors"].split(";")]
        )
    )
    out = {
        "J": int(meta["J"]),
        "m": int(meta["m"]),
        "seed": int(meta["seed"]),
        "sensors": sensors,
        "theta": np.array([float(v) for v in meta["theta"].split(",")]),
    }
    return obs, out
