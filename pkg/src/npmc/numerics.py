"""Seedable random streams and numerically stable statistical primitives.

All weights in this package live in the natural-log domain: a value of
``-inf`` represents an exactly-zero weight, ``+inf`` and ``NaN`` are never
valid.  Likelihoods over tens of observations underflow in linear domain,
so sums of weights always go through :func:`log_sum_exp`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateWeights",
    "NumericalError",
    "RngStream",
    "log_sum_exp",
    "normalize_log_weights",
    "multinomial_sample",
    "regularized_cholesky",
    "sample_multivariate_gaussian",
    "gaussian_log_pdf",
    "weighted_mean_cov",
    "Gaussian",
]

_MASK64 = (1 << 64) - 1
_LOG_2PI = float(np.log(2.0 * np.pi))


class DegenerateWeights(Exception):
    """All weights collapsed to zero; no normalized distribution exists."""


class NumericalError(Exception):
    """A numerical operation failed beyond the configured safeguards."""


def _splitmix64(x: int) -> int:
    # SplitMix64 finalizer; used only to derive substream identifiers.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by the Philox generator, whose 128-bit key is built from the
    seed and stream id, so equal keys reproduce the exact same variate
    sequence and distinct stream ids give statistically independent
    streams.  Child streams are derived from integer indices, never from
    scheduling order, which keeps parallel execution deterministic.
    """

    __slots__ = ("seed", "stream_id", "_generator")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._generator = None

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            key = (self.seed << 64) | self.stream_id
            self._generator = np.random.Generator(np.random.Philox(key=key))
        return self._generator

    def derive(self, *indices: int) -> "RngStream":
        """Return a child stream keyed by this stream and the given indices."""
        sid = self.stream_id
        for ix in indices:
            sid = _splitmix64(sid ^ _splitmix64(int(ix) & _MASK64))
        return RngStream(self.seed, sid)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def log_sum_exp(values) -> float:
    """Compute ``log(sum(exp(values)))`` with max-subtraction for stability.

    Returns ``-inf`` iff every input is ``-inf``.  Raises ``ValueError`` on
    empty input and on ``NaN`` / ``+inf`` entries.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = arr.max()
    if np.isnan(m) or m == np.inf:
        raise ValueError("log weights must be < +inf and not NaN")
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.exp(arr - m).sum()))


def normalize_log_weights(values) -> np.ndarray:
    """Map log weights to normalized probabilities summing to one.

    Raises :class:`DegenerateWeights` when every input is ``-inf``.
    """
    arr = np.asarray(values, dtype=float)
    total = log_sum_exp(arr)
    if total == -np.inf:
        raise DegenerateWeights("all log weights are -inf")
    w = np.exp(arr - total)
    w /= w.sum()
    return w


def multinomial_sample(weights, count: int, rng: RngStream) -> np.ndarray:
    """Draw ``count`` indices i.i.d. from the discrete distribution ``weights``.

    ``weights`` must be nonnegative and sum to 1 within 1e-9.
    """
    w = np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise ValueError("negative weight in multinomial_sample")
    cum = np.cumsum(w)
    if abs(cum[-1] - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {cum[-1]!r}, expected 1 within 1e-9")
    u = rng.generator.random(count) * cum[-1]
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, w.size - 1)


def regularized_cholesky(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor of ``cov``, adding escalating jitter when needed.

    Tries the plain factorization first, then ``eps * 10**k * I`` for
    ``k = 0..3`` with ``eps = 1e-10 * trace/d`` (floored at 1e-10 so a zero
    matrix still factorizes).  Raises :class:`NumericalError` if all
    attempts fail.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    base = np.trace(cov) / d
    eps = 1e-10 * base if base > 0 else 1e-10
    eye = np.eye(d)
    for k in range(4):
        try:
            return np.linalg.cholesky(cov + eps * 10.0**k * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("covariance not factorizable after jitter escalation")


def sample_multivariate_gaussian(mean, cov, rng: RngStream, size: int | None = None):
    """Draw from N(mean, cov) via the (regularized) Cholesky factor.

    Returns a ``(d,)`` vector, or ``(size, d)`` when ``size`` is given.
    """
    mean = np.asarray(mean, dtype=float)
    chol = regularized_cholesky(cov)
    if size is None:
        z = rng.generator.standard_normal(mean.size)
        return mean + z @ chol.T
    z = rng.generator.standard_normal((size, mean.size))
    return mean + z @ chol.T


def gaussian_log_pdf(x, mean, cov):
    """Log-density of N(mean, cov) at ``x`` (a ``(d,)`` point or ``(n, d)`` batch)."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    chol = regularized_cholesky(cov)
    d = mean.size
    resid = np.atleast_2d(x) - mean
    # Solve L z = resid^T by forward substitution; mahalanobis = |z|^2.
    z = np.linalg.solve(chol, resid.T)
    maha = (z * z).sum(axis=0)
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    out = -0.5 * (d * _LOG_2PI + log_det + maha)
    return float(out[0]) if x.ndim == 1 else out


def weighted_mean_cov(samples, weights) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and weighted covariance (no bias correction).

    ``mean = sum_i w_i x_i`` and ``cov = sum_i w_i (x_i - mean)(x_i - mean)^T``.
    """
    x = np.asarray(samples, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.ndim != 2 or w.ndim != 1 or x.shape[0] != w.shape[0]:
        raise ValueError(
            f"shape mismatch: samples {x.shape}, weights {w.shape}"
        )
    mean = w @ x
    centered = x - mean
    cov = (centered * w[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    return mean, cov


@dataclass(frozen=True)
class Gaussian:
    """Multivariate Gaussian with dense mean and covariance.

    Serves both as a parameter prior and as the refitted proposal of the
    adaptive samplers.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, size: int, rng: RngStream) -> np.ndarray:
        return sample_multivariate_gaussian(self.mean, self.cov, rng, size=size)

    def log_pdf(self, x):
        return gaussian_log_pdf(x, self.mean, self.cov)
