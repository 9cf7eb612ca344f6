import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def cone_cdf(s):
    """CDF of the density proportional to 1 - |s| on [-1, 1]."""
    s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    return np.where(s < 0, 0.5 * (1 + s) ** 2, 1 - 0.5 * (1 - s) ** 2)


def chisq_pvalue(counts, probs):
    from scipy import stats

    counts = np.asarray(counts, dtype=float)
    expected = counts.sum() * np.asarray(probs, dtype=float)
    return stats.chisquare(counts, expected).pvalue
