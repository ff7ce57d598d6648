import numpy as np
import pytest

from npmc import RngStream


@pytest.fixture
def rng():
    return RngStream(123456789)


def two_pass_mean_cov(samples, weights):
    """Independent reference for weighted mean/covariance (plain loops)."""
    samples = np.asarray(samples, dtype=float)
    weights = np.asarray(weights, dtype=float)
    d = samples.shape[1]
    mean = np.zeros(d)
    for w, x in zip(weights, samples):
        mean += w * x
    cov = np.zeros((d, d))
    for w, x in zip(weights, samples):
        centered = x - mean
        cov += w * np.outer(centered, centered)
    return mean, cov
