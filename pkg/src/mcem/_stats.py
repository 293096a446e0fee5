"""Small numerical helpers shared by the samplers and the MCEM drivers."""

import math
from statistics import NormalDist

import numpy as np
from scipy.special import expit  # noqa: F401  re-exported

_STD_NORMAL = NormalDist()


def norm_ppf(p):
    """Standard normal quantile.

    Uses the standard library (Wichura's AS241) rather than scipy, so
    seeded traces do not depend on the installed scipy version.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    return _STD_NORMAL.inv_cdf(p)


def two_sided_z(conf):
    """Critical value ``z`` with ``P(|Z| <= z) = conf``."""
    if not 0.0 < conf < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {conf!r}")
    return norm_ppf(0.5 + 0.5 * conf)


def iid_se(x):
    """Standard error of the mean of iid draws along axis 0."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two draws for a standard error")
    return np.std(x, axis=0, ddof=1) / math.sqrt(n)


def batch_means_se(x, n_batches=None):
    """Batch-means standard error of the mean of a correlated sequence.

    Parameters
    ----------
    x : array_like, shape (n,) or (n, d)
        Chain output, one row per iteration.
    n_batches : int, optional
        Number of non-overlapping batches. Defaults to ``floor(sqrt(n))``.
        Trailing draws that do not fill a batch are dropped.

    Returns
    -------
    mean : float or ndarray
        Mean over the retained draws.
    se : float or ndarray
        Estimated Monte Carlo standard error of ``mean``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n_batches is None:
        n_batches = int(math.isqrt(n))
    if n_batches < 2:
        raise ValueError("need at least two batches")
    b = n // n_batches
    if b < 1:
        raise ValueError(f"{n} draws cannot fill {n_batches} batches")
    kept = x[: b * n_batches]
    batch = kept.reshape((n_batches, b) + x.shape[1:]).mean(axis=1)
    mean = kept.mean(axis=0)
    var = b * np.sum((batch - mean) ** 2, axis=0) / (n_batches - 1)
    return mean, np.sqrt(var / (b * n_batches))


def log1pexp(z):
    """Elementwise ``log(1 + exp(z))`` without overflow."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def expit_pair(z):
    """``(p, 1 - p, p (1 - p))`` for ``p = expit(z)``, each without cancellation.

    One exponential of ``-|z|`` serves all three; the smaller of ``p`` and
    ``1 - p`` is always formed as ``e / (1 + e)``.
    """
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    big = 1.0 / (1.0 + e)
    small = e * big
    pos = z >= 0
    return np.where(pos, big, small), np.where(pos, small, big), small * big
