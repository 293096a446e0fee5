import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mcem.estimators import LinearMixedModelEM, LogitNormalGLMM
from mcem.exceptions import ConfigError
from mcem.lmm import bulls


def _bulls_xy():
    data = bulls()
    X = np.concatenate([[lab] * g.size for lab, g in zip(data.labels, data.groups)])
    return X.reshape(-1, 1), np.concatenate(data.groups)


def _panel_xy(data):
    rows = [(lab, xv, yv) for lab, (x, y) in zip(data.labels, data.groups()) for xv, yv in zip(x, y)]
    arr = np.array(rows)
    return arr[:, :2], arr[:, 2]


class TestLinearMixedModelEM:
    def test_fit_matches_mle(self, bulls_mle):
        X, y = _bulls_xy()
        est = LinearMixedModelEM(theta0=(55, 45, 260), epsilon=1e-12).fit(X, y)
        assert np.allclose(est.theta_.values, bulls_mle.values, rtol=1e-7)
        assert est.converged_ and est.n_iter_ == len(est.trace_)

    def test_default_start(self, bulls_mle):
        X, y = _bulls_xy()
        est = LinearMixedModelEM(epsilon=1e-12).fit(X, y)
        assert np.allclose(est.theta_.values, bulls_mle.values, rtol=1e-6)

    def test_predict_shrinks_toward_mu(self):
        X, y = _bulls_xy()
        est = LinearMixedModelEM().fit(X, y)
        pred = est.predict(np.array([[1], [4], [99]]))
        ybar = [y[X[:, 0] == g].mean() for g in (1, 4)]
        for p, yb in zip(pred[:2], ybar):
            assert min(est.theta_.mu, yb) < p < max(est.theta_.mu, yb)
        assert pred[2] == est.theta_.mu
        assert est.loglik(X, y) == pytest.approx(est.loglik_)

    def test_mcem_reproducible(self):
        X, y = _bulls_xy()
        kw = dict(algorithm="mcem", m0=500, max_iter=10, random_state=3)
        a = LinearMixedModelEM(**kw).fit(X, y)
        b = LinearMixedModelEM(**kw).fit(X, y)
        assert a.trace_.thetas().tobytes() == b.trace_.thetas().tobytes()

    def test_sklearn_params(self):
        est = LinearMixedModelEM(algorithm="stable-mcem", r0=0.3)
        c = clone(est)
        assert c.get_params() == est.get_params()
        c.set_params(m0=50)
        assert c.m0 == 50 and est.m0 == 10_000

    def test_errors(self):
        X, y = _bulls_xy()
        with pytest.raises(NotFittedError):
            LinearMixedModelEM().predict(X)
        with pytest.raises(ValueError):
            LinearMixedModelEM().fit(X, y[:-1])
        with pytest.raises(ValueError):
            LinearMixedModelEM().fit(np.column_stack([X, X]), y)
        with pytest.raises(ConfigError):
            LinearMixedModelEM(algorithm="newton").fit(X, y)

    def test_score_is_r2(self):
        X, y = _bulls_xy()
        est = LinearMixedModelEM().fit(X, y)
        assert -1.0 < est.score(X, y) < 1.0


class TestLogitNormalGLMM:
    def test_fit_and_predict(self, panel27):
        X, y = _panel_xy(panel27)
        est = LogitNormalGLMM(theta0=(2.0, 1.0), m0=1000, max_iter=15, burnin=200, random_state=0)
        est.fit(X, y)
        assert len(est.trace_) <= 15
        assert abs(est.theta_.beta - 6.0933) < 1.5
        proba = est.predict_proba(X)
        assert proba.shape == (150, 2)
        assert np.allclose(proba.sum(axis=1), 1.0) and np.all((proba >= 0) & (proba <= 1))
        assert set(np.unique(est.predict(X))) <= {0, 1}
        assert est.score(X, y) > 0.6

    def test_unseen_group_marginal(self, panel27):
        X, y = _panel_xy(panel27)
        est = LogitNormalGLMM(theta0=(2.0, 1.0), m0=200, max_iter=3, burnin=50, random_state=1).fit(X, y)
        p_new = est.predict_proba(np.array([[999, 0.0]]))[0, 1]
        # symmetric random effect around a zero linear predictor
        assert p_new == pytest.approx(0.5, abs=1e-12)

    def test_rejects(self, panel27):
        X, y = _panel_xy(panel27)
        with pytest.raises(ConfigError):
            LogitNormalGLMM(algorithm="em").fit(X, y)
        with pytest.raises(ValueError, match="binary"):
            LogitNormalGLMM().fit(X, y + 2)
        with pytest.raises(ValueError):
            LogitNormalGLMM().fit(X[:, :1], y)
