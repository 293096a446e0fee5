import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from mcem._stats import batch_means_se, iid_se, log1pexp, norm_ppf, two_sided_z


@given(st.floats(1e-12, 1 - 1e-12))
def test_norm_ppf_matches_scipy(p):
    assert norm_ppf(p) == pytest.approx(norm.ppf(p), abs=1e-8)


def test_norm_ppf_known_values():
    assert norm_ppf(0.5) == 0.0
    assert norm_ppf(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    assert two_sided_z(0.95) == pytest.approx(1.959963984540054, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, float("nan")])
def test_norm_ppf_domain(p):
    with pytest.raises(ValueError):
        norm_ppf(p)


def test_log1pexp_extremes():
    z = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    out = log1pexp(z)
    assert np.all(np.isfinite(out))
    assert out[2] == pytest.approx(math.log(2))
    assert out[4] == pytest.approx(800.0)
    assert out[0] == pytest.approx(0.0, abs=1e-300)
    assert out[1] == pytest.approx(math.exp(-30), rel=1e-12)


def test_iid_se():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert iid_se(x) == pytest.approx(np.std(x, ddof=1) / 2)
    with pytest.raises(ValueError):
        iid_se([1.0])


def test_batch_means_iid_close_to_naive():
    x = np.random.default_rng(0).standard_normal(100_000)
    mean, se = batch_means_se(x)
    assert mean == pytest.approx(x[: 316 * 316].mean())
    assert se == pytest.approx(1 / math.sqrt(x.size), rel=0.15)


def test_batch_means_detects_correlation():
    # AR(1) with rho = 0.9: variance inflation (1 + rho) / (1 - rho) = 19
    rng = np.random.default_rng(1)
    n, rho = 200_000, 0.9
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho**2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    _, se = batch_means_se(x)
    true = math.sqrt(19 / (1 - rho**2) / n)
    assert se == pytest.approx(true, rel=0.2)


def test_batch_means_uses_sqrt_batches():
    x = np.arange(10.0)
    # floor(sqrt(10)) = 3 batches of 3, the last draw dropped
    mean, se = batch_means_se(x)
    assert mean == pytest.approx(4.0)
    batches = np.array([1.0, 4.0, 7.0])
    assert se == pytest.approx(math.sqrt(3 * np.var(batches, ddof=1) / 9))


def test_log1pexp_matches_logaddexp():
    z = np.linspace(-750, 750, 30_001)
    assert np.allclose(log1pexp(z), np.logaddexp(0.0, z), rtol=1e-15, atol=0)


def test_expit_pair_matches_scipy():
    from scipy.special import expit as sp_expit

    from mcem._stats import expit_pair

    z = np.linspace(-700, 700, 14_001)
    p, pc, pq = expit_pair(z)
    assert np.allclose(p, sp_expit(z), rtol=1e-14, atol=0)
    assert np.allclose(pc, sp_expit(-z), rtol=1e-14, atol=0)
    assert np.allclose(pq, sp_expit(z) * sp_expit(-z), rtol=1e-13, atol=0)
