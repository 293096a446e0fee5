"""Shared fixtures and independent oracles.

The oracles deliberately avoid the package's own formulas: dense
multivariate-normal densities for the LMM, 50-digit straight-line
transcriptions for the EM update, and brute-force integration for the GLMM.
"""

import math

import mpmath
import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import multivariate_normal

from mcem import LinearMixedModel, LmmTheta, StoppingConfig, bulls, run_em
from mcem.glmm import PanelDataset, simulate_panel

START = LmmTheta(55.0, 45.0, 260.0)


def dense_loglik(values, data):
    """Marginal LMM log-likelihood from explicit per-group covariance matrices."""
    mu, su2, se2 = (float(v) for v in values)
    total = 0.0
    for g in data.groups:
        n = g.size
        cov = se2 * np.eye(n) + su2 * np.ones((n, n))
        total += multivariate_normal(mean=np.full(n, mu), cov=cov).logpdf(g)
    return float(total)


def dense_mle(data, start=(55.0, 45.0, 260.0)):
    """Direct maximizer of :func:`dense_loglik` over ``(mu, log su2, log se2)``."""
    def obj(z):
        return -dense_loglik((z[0], math.exp(z[1]), math.exp(z[2])), data)

    z0 = np.array([start[0], math.log(start[1]), math.log(start[2])])
    res = minimize(obj, z0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20_000, "maxfev": 20_000})
    return np.array([res.x[0], math.exp(res.x[1]), math.exp(res.x[2])]), -res.fun


def mp_em_step(values, groups, dps=50):
    """Three-line EM update transcribed in 50-digit arithmetic."""
    with mpmath.workdps(dps):
        mu, su2, se2 = (mpmath.mpf(repr(float(v))) for v in values)
        uh, vh, ns, ybars, ys = [], [], [], [], []
        for g in groups:
            n = len(g)
            y = [mpmath.mpf(int(v)) if float(v).is_integer() else mpmath.mpf(repr(float(v)))
                 for v in g]
            ybar = mpmath.fsum(y) / n
            den = se2 + n * su2
            uh.append((se2 * mu + n * su2 * ybar) / den)
            vh.append(se2 * su2 / den)
            ns.append(n)
            ybars.append(ybar)
            ys.append(y)
        q = len(groups)
        N = sum(ns)
        mu1 = mpmath.fsum(uh) / q
        su2_1 = mpmath.fsum(v + u * u for u, v in zip(uh, vh)) / q - mu1 * mu1
        se2_1 = mpmath.fsum(
            mpmath.fsum(yy * yy for yy in y) - 2 * n * yb * u + n * (v + u * u)
            for y, n, yb, u, v in zip(ys, ns, ybars, uh, vh)
        ) / N
        return mu1, su2_1, se2_1


def mp_q(values, tilde, groups, dps=50):
    """Q(theta | tilde) without 2 pi constants, 50-digit arithmetic."""
    with mpmath.workdps(dps):
        mu, su2, se2 = (mpmath.mpf(repr(float(v))) for v in values)
        m0, s0, e0 = (mpmath.mpf(repr(float(v))) for v in tilde)
        total = mpmath.mpf(0)
        for g in groups:
            n = len(g)
            y = [mpmath.mpf(repr(float(v))) for v in g]
            ybar = mpmath.fsum(y) / n
            den = e0 + n * s0
            u = (e0 * m0 + n * s0 * ybar) / den
            v = e0 * s0 / den
            eu2 = v + u * u
            resid = mpmath.fsum(yy * yy for yy in y) - 2 * n * ybar * u + n * eu2
            total += -n / 2 * mpmath.log(se2) - resid / (2 * se2)
            total += -mpmath.log(su2) / 2 - (eu2 - 2 * mu * u + mu * mu) / (2 * su2)
        return total


@pytest.fixture(scope="session")
def bulls_data():
    return bulls()


@pytest.fixture(scope="session")
def lmm_model():
    return LinearMixedModel()


@pytest.fixture(scope="session")
def bulls_mle(bulls_data, lmm_model):
    tight = StoppingConfig(epsilon=1e-15, max_iter=100_000)
    return run_em(lmm_model, START, tight, bulls_data).final


@pytest.fixture(scope="session")
def bulls_max_loglik(bulls_data, bulls_mle):
    return dense_loglik(bulls_mle, bulls_data)


@pytest.fixture(scope="session")
def panel27():
    """Synthetic benchmark-design panel used throughout the GLMM tests."""
    return simulate_panel(6.132, 1.766, 10, 15, np.random.default_rng(27))


@pytest.fixture
def tiny_panel():
    """One group, two observations: ``x = (0, 1)``, ``y = (1, 0)``."""
    return PanelDataset([[0.0, 1.0]], [[1.0, 0.0]])


def random_lmm_thetas(rng, k):
    """Random valid parameters spread around the bulls scale."""
    mu = rng.uniform(20, 90, k)
    su2 = np.exp(rng.uniform(math.log(1.0), math.log(500.0), k))
    se2 = np.exp(rng.uniform(math.log(20.0), math.log(1000.0), k))
    return [LmmTheta(*v) for v in zip(mu, su2, se2)]
