"""Scikit-learn style estimators wrapping the EM and MCEM drivers.

Both estimators take ``X`` with a leading group-label column and expose the
fitted parameter as ``theta_`` and the full iteration history as
``trace_``.
"""

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._stats import expit
from ._validation import check_grouped, check_panel, check_query, check_rng
from .engine import ALGORITHMS, AdaptiveConfig, ScheduleConfig, run_algorithm
from .exceptions import ConfigError
from .glmm import (
    GlmmTheta,
    LogitNormalModel,
    glmm_loglik_quadrature,
    glmm_posterior_moments,
)
from .kernel import StoppingConfig
from .lmm import LinearMixedModel, LmmTheta, lmm_loglik, lmm_posterior


class _MCEMParams:
    """Hyperparameters shared by both estimators."""

    def _stopping(self):
        return StoppingConfig(self.delta, self.epsilon, self.consecutive, self.max_iter)

    def _schedule(self):
        alpha = self.alpha if self.schedule == "polynomial" else None
        return ScheduleConfig(self.schedule, int(self.m0), alpha)

    def _adaptive(self):
        return AdaptiveConfig(
            batches=self.batches, conf=self.conf, growth=self.growth,
            m_start=int(self.m0), m_cap=int(self.m_cap),
        )

    def _run(self, model, data, theta0, algorithms):
        if self.algorithm not in algorithms:
            raise ConfigError(
                f"algorithm {self.algorithm!r} is not available here; choose from {algorithms}"
            )
        trace = run_algorithm(
            model, data, self.algorithm, theta0,
            schedule=self._schedule(), stop=self._stopping(),
            stable={"r0": self.r0, "c": self.c}, adaptive=self._adaptive(),
            rng=check_rng(self.random_state),
        )
        self.trace_ = trace
        self.theta_ = trace.final
        self.n_iter_ = len(trace)
        self.converged_ = trace.converged
        self.n_reinit_ = trace.records[-1].p if trace.records else 0
        return trace


class LinearMixedModelEM(_MCEMParams, RegressorMixin, BaseEstimator):
    """Maximum likelihood for the one-way random-effects model.

    Parameters
    ----------
    algorithm : {"em", "em-gradient", "mcem", "stable-mcem", "mcem-adaptive"}
    theta0 : tuple of float, optional
        Starting ``(mu, sigma_u2, sigma_e2)``. Defaults to moment estimates.
    schedule : {"constant", "polynomial"}
        Monte Carlo sample-size schedule (Monte Carlo algorithms only).
    m0 : int
        Initial Monte Carlo sample size.
    alpha : float
        Growth exponent for the polynomial schedule, must exceed 1.
    delta, epsilon, consecutive, max_iter
        Relative-change stopping rule.
    r0, c : float
        Initial half-width and growth of the stable-MCEM boxes.
    batches, conf, growth, m_cap
        Swamping rule for ``mcem-adaptive``.
    random_state : int, Generator or None

    Attributes
    ----------
    theta_ : LmmTheta
    trace_ : Trace
    random_effects_ : ndarray
        Posterior means of the group effects at ``theta_``.
    group_labels_ : list
    loglik_ : float
    """

    def __init__(self, algorithm="em", theta0=None, schedule="constant", m0=10_000, alpha=2.0,
                 delta=1e-3, epsilon=1e-6, consecutive=3, max_iter=500, r0=1.0, c=2.0,
                 batches=10, conf=0.95, growth=1.5, m_cap=1_000_000, random_state=None):
        self.algorithm = algorithm
        self.theta0 = theta0
        self.schedule = schedule
        self.m0 = m0
        self.alpha = alpha
        self.delta = delta
        self.epsilon = epsilon
        self.consecutive = consecutive
        self.max_iter = max_iter
        self.r0 = r0
        self.c = c
        self.batches = batches
        self.conf = conf
        self.growth = growth
        self.m_cap = m_cap
        self.random_state = random_state

    @staticmethod
    def _moment_start(data):
        mu = float(np.mean(data.ybar))
        within = float(np.sum(data.ssw) / max(data.N - data.q, 1))
        between = float(np.var(data.ybar)) if data.q > 1 else within
        return LmmTheta(mu, max(between, 1e-3 * within, 1e-8), max(within, 1e-8))

    def fit(self, X, y):
        data = check_grouped(X, y)
        theta0 = self._moment_start(data) if self.theta0 is None else LmmTheta(*self.theta0)
        self._run(LinearMixedModel(), data, theta0, ALGORITHMS)
        post = lmm_posterior(self.theta_, data)
        self.group_labels_ = list(data.labels)
        self.random_effects_ = post.uhat
        self.loglik_ = lmm_loglik(self.theta_, data)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        """Posterior mean of the group effect; ``mu`` for unseen groups."""
        check_is_fitted(self, "theta_")
        X = check_query(X, 1)
        lookup = dict(zip(self.group_labels_, self.random_effects_))
        return np.array([lookup.get(g, self.theta_.mu) for g in X[:, 0]], dtype=float)

    def loglik(self, X, y):
        """Marginal log-likelihood of ``(X, y)`` at the fitted parameter."""
        check_is_fitted(self, "theta_")
        return lmm_loglik(self.theta_, check_grouped(X, y))


class LogitNormalGLMM(_MCEMParams, ClassifierMixin, BaseEstimator):
    """Monte Carlo EM for the logit-normal random-intercept model.

    ``X`` has columns ``(group, x)``; ``y`` is binary. The E-step uses a
    Metropolis-Hastings independence sampler with ``burnin`` discarded
    sweeps per iteration. Parameters mirror :class:`LinearMixedModelEM`;
    only the Monte Carlo algorithms apply.

    Attributes
    ----------
    theta_ : GlmmTheta
    trace_ : Trace
    classes_ : ndarray
    loglik_ : float
        Quadrature log-likelihood at ``theta_``.
    """

    def __init__(self, algorithm="mcem", theta0=(0.0, 1.0), schedule="constant", m0=10_000,
                 alpha=2.0, delta=1e-3, epsilon=1e-6, consecutive=3, max_iter=50, r0=1.0,
                 c=2.0, batches=10, conf=0.95, growth=1.5, m_cap=1_000_000, burnin=500,
                 nodes=20, random_state=None):
        self.algorithm = algorithm
        self.theta0 = theta0
        self.schedule = schedule
        self.m0 = m0
        self.alpha = alpha
        self.delta = delta
        self.epsilon = epsilon
        self.consecutive = consecutive
        self.max_iter = max_iter
        self.r0 = r0
        self.c = c
        self.batches = batches
        self.conf = conf
        self.growth = growth
        self.m_cap = m_cap
        self.burnin = burnin
        self.nodes = nodes
        self.random_state = random_state

    def fit(self, X, y):
        data = check_panel(X, y)
        model = LogitNormalModel(self.burnin, self.nodes)
        self._run(model, data, GlmmTheta(*self.theta0), ("mcem", "stable-mcem", "mcem-adaptive"))
        self.classes_ = np.array([0, 1])
        self.group_labels_ = list(data.labels)
        self.random_effects_, _ = glmm_posterior_moments(self.theta_, data)
        self.loglik_ = glmm_loglik_quadrature(self.theta_, data, self.nodes)
        self.n_features_in_ = 2
        return self

    def predict_proba(self, X):
        """Conditional success probability at the posterior-mean group effect.

        Rows from unseen groups get the population-averaged probability.
        """
        check_is_fitted(self, "theta_")
        X = check_query(X, 2)
        x = np.asarray(X[:, 1], dtype=float)
        beta, sigma2 = self.theta_.beta, self.theta_.sigma2
        lookup = dict(zip(self.group_labels_, self.random_effects_))
        z, w = hermgauss(self.nodes)
        p1 = np.empty(x.size)
        for k, (g, xv) in enumerate(zip(X[:, 0], x)):
            if g in lookup:
                p1[k] = expit(beta * xv + lookup[g])
            else:
                nodes = math.sqrt(2.0 * sigma2) * z
                p1[k] = float(np.sum(w * expit(beta * xv + nodes)) / math.sqrt(math.pi))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] > 0.5).astype(int)]
