"""One-way random-effects linear mixed model.

``y_ij = u_i + e_ij`` with ``u_i ~ N(mu, sigma_u2)`` and
``e_ij ~ N(0, sigma_e2)``. Everything here is closed form: the marginal
likelihood, the normal posterior of the random effects, the EM update and
the expected complete-data log-likelihood. The Monte Carlo update draws
exactly from that posterior.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .kernel import HierarchicalModel, Theta

LMM_NAMES = ("mu", "sigma_u2", "sigma_e2")
LMM_POSITIVE = (False, True, True)
_LOG_2PI = math.log(2.0 * math.pi)


class LmmTheta(Theta):
    """``(mu, sigma_u2, sigma_e2)`` with both variances strictly positive."""

    __slots__ = ()

    def __init__(self, mu, sigma_u2, sigma_e2):
        super().__init__([mu, sigma_u2, sigma_e2], LMM_NAMES, LMM_POSITIVE)

    @property
    def mu(self):
        return float(self._values[0])

    @property
    def sigma_u2(self):
        return float(self._values[1])

    @property
    def sigma_e2(self):
        return float(self._values[2])


class GroupedDataset:
    """Per-group real response vectors.

    Group summaries (sizes, means, sums of squares) are computed once with
    compensated summation and reused by every update.
    """

    def __init__(self, groups, labels=None):
        groups = [np.asarray(g, dtype=float).reshape(-1) for g in groups]
        if not groups:
            raise ValueError("need at least one group")
        for i, g in enumerate(groups):
            if g.size == 0:
                raise ValueError(f"group {i} is empty")
            if not np.all(np.isfinite(g)):
                raise ValueError(f"group {i} has non-finite responses")
        self.groups = groups
        self.labels = list(range(1, len(groups) + 1)) if labels is None else list(labels)
        if len(self.labels) != len(groups):
            raise ValueError("one label per group required")
        self.n = np.array([g.size for g in groups], dtype=float)
        self.q = len(groups)
        self.N = int(sum(g.size for g in groups))
        self.ybar = np.array([math.fsum(g) / g.size for g in groups])
        self.sum_sq = np.array([math.fsum(g * g) for g in groups])
        self.ssw = np.array([math.fsum((g - yb) ** 2) for g, yb in zip(groups, self.ybar)])

    def __repr__(self):
        return f"GroupedDataset(q={self.q}, n={self.n.astype(int).tolist()})"


BULLS_TABLE = (
    (46, 31, 37, 62, 30),
    (70, 59),
    (52, 44, 57, 40, 67, 64, 70),
    (47, 21, 70, 46, 14),
    (42, 64, 50, 69, 77, 81, 87),
    (35, 68, 59, 38, 57, 76, 57, 29, 60),
)

# maximum likelihood estimates reported for the bulls data (three decimals)
BULLS_MLE = LmmTheta(53.318, 54.821, 249.23)


def bulls():
    """Bovine artificial insemination data: six bulls, 35 samples."""
    return GroupedDataset(BULLS_TABLE)


def _check(theta):
    if not isinstance(theta, Theta) or theta.names != LMM_NAMES:
        raise TypeError(f"expected an LmmTheta, got {theta!r}")
    return theta.values


def lmm_loglik(theta, data):
    """Exact marginal log-likelihood.

    Within group ``i`` the responses are jointly normal with mean ``mu`` and
    covariance ``sigma_e2 I + sigma_u2 J``; the rank-one structure gives the
    determinant and quadratic form in closed form.
    """
    mu, su2, se2 = _check(theta)
    n = data.n
    lam = se2 + n * su2
    terms = (
        n * _LOG_2PI
        + (n - 1.0) * math.log(se2)
        + np.log(lam)
        + data.ssw / se2
        + n * (data.ybar - mu) ** 2 / lam
    )
    return -0.5 * math.fsum(terms)


@dataclass(frozen=True)
class PosteriorParams:
    """Conditional mean ``uhat`` and variance ``vhat`` of each random effect."""

    uhat: np.ndarray
    vhat: np.ndarray


def lmm_posterior(theta, data):
    """Normal posterior of the random effects given the data."""
    mu, su2, se2 = _check(theta)
    n = data.n
    denom = se2 + n * su2
    uhat = (se2 * mu + n * su2 * data.ybar) / denom
    vhat = se2 * su2 / denom
    return PosteriorParams(uhat, vhat)


def _new_theta(values):
    try:
        return LmmTheta(*values)
    except DomainError as exc:
        raise DomainError(f"update left the parameter space: {exc}", exc.component) from exc


def lmm_em_step(theta, data):
    """Closed-form EM update."""
    post = lmm_posterior(theta, data)
    uhat, vhat = post.uhat, post.vhat
    q, n = data.q, data.n
    second = vhat + uhat * uhat
    mu = math.fsum(uhat) / q
    su2 = math.fsum(second) / q - mu * mu
    resid = data.sum_sq - 2.0 * n * data.ybar * uhat + n * second
    se2 = math.fsum(resid) / data.N
    return _new_theta((mu, su2, se2))


def _expected_terms(theta_tilde, data):
    post = lmm_posterior(theta_tilde, data)
    uhat, vhat = post.uhat, post.vhat
    second = vhat + uhat * uhat
    resid = math.fsum(data.sum_sq - 2.0 * data.n * data.ybar * uhat + data.n * second)
    return uhat, second, resid


def lmm_q(theta, theta_tilde, data):
    """Expected complete-data log-likelihood ``Q(theta | theta_tilde)``.

    Uses the complete-data log-likelihood without its ``2 pi`` constants, so
    ``lmm_q - lmm_loglik`` equals the expected log posterior density of the
    random effects up to the constant ``(N + q) log(2 pi) / 2``.
    """
    mu, su2, se2 = _check(theta)
    uhat, second, resid = _expected_terms(theta_tilde, data)
    q, N = data.q, data.N
    dev = math.fsum(second - 2.0 * mu * uhat + mu * mu)
    return (
        -0.5 * N * math.log(se2)
        - resid / (2.0 * se2)
        - 0.5 * q * math.log(su2)
        - dev / (2.0 * su2)
    )


def lmm_grad_q_diag(theta, data):
    """Gradient and Hessian of ``Q(. | theta)`` evaluated at ``theta``.

    Returns
    -------
    grad : ndarray, shape (3,)
    hess : ndarray, shape (3, 3)
    singular : bool
        True when the Hessian is numerically singular; the caller decides
        what to do about it.
    """
    mu, su2, se2 = _check(theta)
    uhat, second, resid = _expected_terms(theta, data)
    q, N = data.q, data.N
    sdev = math.fsum(uhat - mu)
    dev = math.fsum(second - 2.0 * mu * uhat + mu * mu)
    grad = np.array([
        sdev / su2,
        -0.5 * q / su2 + 0.5 * dev / su2**2,
        -0.5 * N / se2 + 0.5 * resid / se2**2,
    ])
    hess = np.zeros((3, 3))
    hess[0, 0] = -q / su2
    hess[0, 1] = hess[1, 0] = -sdev / su2**2
    hess[1, 1] = 0.5 * q / su2**2 - dev / su2**3
    hess[2, 2] = 0.5 * N / se2**2 - resid / se2**3
    singular = np.linalg.cond(hess) > 1e14
    return grad, hess, bool(singular)


def lmm_em_gradient_step(theta, data, max_halvings=30):
    """One Newton step toward the maximizer of ``Q(. | theta)``.

    The step is halved while it would leave the positive-variance region.
    """
    grad, hess, singular = lmm_grad_q_diag(theta, data)
    if singular:
        raise np.linalg.LinAlgError(f"Hessian of Q is singular at {theta!r}")
    step = -np.linalg.solve(hess, grad)
    base = theta.values
    scale = 1.0
    for _ in range(max_halvings + 1):
        cand = base + scale * step
        if cand[1] > 0 and cand[2] > 0:
            return LmmTheta(*cand)
        scale *= 0.5
    raise DomainError(
        f"EM-gradient step from {theta!r} stays outside the parameter space "
        f"after {max_halvings} halvings"
    )


@dataclass(frozen=True)
class LmmSuffStats:
    """Complete-data sufficient statistics per Monte Carlo draw.

    ``weighted_u2`` is ``sum_i n_i u_i^2``; it coincides with ``n * sum_u2``
    only for balanced designs, so the residual variance needs it separately.
    """

    sum_u: np.ndarray
    sum_u2: np.ndarray
    cross: np.ndarray
    weighted_u2: np.ndarray

    @classmethod
    def from_draws(cls, u, data):
        u = np.atleast_2d(u)
        return cls(
            sum_u=u.sum(axis=1),
            sum_u2=(u * u).sum(axis=1),
            cross=u @ (data.n * data.ybar),
            weighted_u2=(u * u) @ data.n,
        )


def lmm_sample(theta, data, m, rng):
    """``m`` iid draws from the posterior of the random effects, shape ``(m, q)``."""
    post = lmm_posterior(theta, data)
    z = rng.standard_normal((int(m), data.q))
    return post.uhat + np.sqrt(post.vhat) * z


def lmm_mstep(draws, data, theta=None):
    """Maximize the Monte Carlo average of the complete-data log-likelihood."""
    u = np.atleast_2d(np.asarray(draws, dtype=float))
    m, q = u.shape
    if q != data.q:
        raise ValueError(f"draws have {q} columns, data has {data.q} groups")
    if m < 2:
        raise ValueError(f"need at least 2 draws, got {m}")
    # pairwise summation over draws, compensated summation over groups
    mu = math.fsum(u.sum(axis=0)) / (m * q)
    su2 = math.fsum(((u - mu) ** 2).sum(axis=0)) / (m * q)
    resid = (
        m * math.fsum(data.sum_sq)
        - 2.0 * math.fsum(u.sum(axis=0) * data.n * data.ybar)
        + math.fsum((u * u).sum(axis=0) * data.n)
    )
    se2 = resid / (m * data.N)
    return _new_theta((mu, su2, se2))


def lmm_mcem_step(theta, data, m, rng):
    """Monte Carlo EM update from ``m`` exact posterior draws."""
    if m < 2:
        raise ValueError(f"Monte Carlo sample size must be >= 2, got {m}")
    return lmm_mstep(lmm_sample(theta, data, m, rng), data, theta)


def lmm_complete_loglik(theta, draws, data):
    """Complete-data log-likelihood (no ``2 pi`` constants) for each draw."""
    mu, su2, se2 = _check(theta)
    u = np.atleast_2d(np.asarray(draws, dtype=float))
    stats = LmmSuffStats.from_draws(u, data)
    resid = math.fsum(data.sum_sq) - 2.0 * stats.cross + stats.weighted_u2
    dev = stats.sum_u2 - 2.0 * mu * stats.sum_u + data.q * mu * mu
    return (
        -0.5 * data.N * math.log(se2)
        - resid / (2.0 * se2)
        - 0.5 * data.q * math.log(su2)
        - dev / (2.0 * su2)
    )


class LinearMixedModel(HierarchicalModel):
    """Capability record for the one-way random-effects model."""

    names = LMM_NAMES
    positive = LMM_POSITIVE
    exact_sampling = True

    def make_theta(self, values):
        return LmmTheta(*values)

    def loglik(self, theta, data):
        return lmm_loglik(theta, data)

    def em_step(self, theta, data):
        return lmm_em_step(theta, data)

    def em_gradient_step(self, theta, data):
        return lmm_em_gradient_step(theta, data)

    def sample(self, theta, data, m, rng):
        return lmm_sample(theta, data, m, rng)

    def mstep(self, draws, data, theta=None):
        return lmm_mstep(draws, data, theta)

    def mcem_step(self, theta, data, m, rng):
        return lmm_mcem_step(theta, data, m, rng)

    def complete_loglik(self, theta, draws, data):
        return lmm_complete_loglik(theta, draws, data)
