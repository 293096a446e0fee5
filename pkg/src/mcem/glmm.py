"""Logit-normal generalized linear mixed model with random intercepts.

``logit P(y_ij = 1 | u) = beta * x_ij + u_i`` with ``u_i ~ N(0, sigma2)``.
The posterior of the random effects has no closed form, so the E-step is
simulated with a variable-at-a-time Metropolis-Hastings independence
sampler that proposes from the prior. Adaptive Gauss-Hermite quadrature
supplies the likelihood for monitoring and as a test oracle.
"""

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import minimize
from scipy.special import logsumexp

from ._stats import expit, expit_pair, log1pexp
from .exceptions import ConvergenceError, DomainError
from .kernel import HierarchicalModel, Theta

GLMM_NAMES = ("beta", "sigma2")
GLMM_POSITIVE = (False, True)

# rows of draws processed at once; small blocks keep temporaries in cache
_CHUNK = 512
# search box for the direct maximizer; the quadrature is unreliable for
# extreme variances where the integrand is far from Gaussian
_BETA_BOUND = 50.0
_LOG_SIGMA2_BOUNDS = (math.log(1e-8), math.log(1e4))


class GlmmTheta(Theta):
    """``(beta, sigma2)`` with ``sigma2 > 0``."""

    __slots__ = ()

    def __init__(self, beta, sigma2):
        super().__init__([beta, sigma2], GLMM_NAMES, GLMM_POSITIVE)

    @property
    def beta(self):
        return float(self._values[0])

    @property
    def sigma2(self):
        return float(self._values[1])


BOOTH_HOBERT_MLE = GlmmTheta(6.132, 1.766)


class PanelDataset:
    """Binary responses with a scalar covariate, grouped by subject.

    Stored as ``(q, n_max)`` arrays padded with zeros; ``mask`` marks real
    observations.
    """

    def __init__(self, x, y, labels=None):
        x = [np.asarray(xi, dtype=float).reshape(-1) for xi in x]
        y = [np.asarray(yi, dtype=float).reshape(-1) for yi in y]
        if not x or len(x) != len(y):
            raise ValueError("x and y need the same, positive, number of groups")
        for i, (xi, yi) in enumerate(zip(x, y)):
            if xi.size == 0 or xi.size != yi.size:
                raise ValueError(f"group {i}: need matching, nonempty x and y")
            if not np.all((yi == 0) | (yi == 1)):
                raise ValueError(f"group {i}: responses must be 0 or 1")
            if not np.all(np.isfinite(xi)):
                raise ValueError(f"group {i}: covariates must be finite")
        self.q = len(x)
        self.n = np.array([xi.size for xi in x])
        self.N = int(self.n.sum())
        width = int(self.n.max())
        self.x = np.zeros((self.q, width))
        self.y = np.zeros((self.q, width))
        self.mask = np.zeros((self.q, width), dtype=bool)
        for i, (xi, yi) in enumerate(zip(x, y)):
            self.x[i, : xi.size] = xi
            self.y[i, : yi.size] = yi
            self.mask[i, : xi.size] = True
        self.labels = list(range(1, self.q + 1)) if labels is None else list(labels)
        if len(self.labels) != self.q:
            raise ValueError("one label per group required")
        self.ysum = self.y.sum(axis=1)
        self.xy_group = np.sum(self.x * self.y, axis=1)
        self.xy = float(self.xy_group.sum())

    def groups(self):
        """Iterate over ``(x_i, y_i)`` pairs without padding."""
        for i in range(self.q):
            k = self.n[i]
            yield self.x[i, :k], self.y[i, :k]

    def subset(self, idx):
        pairs = list(self.groups())
        return PanelDataset(
            [pairs[i][0] for i in idx], [pairs[i][1] for i in idx], [self.labels[i] for i in idx]
        )

    def __repr__(self):
        return f"PanelDataset(q={self.q}, N={self.N})"


def benchmark_x(q=10, n=15):
    """Covariate layout of the benchmark design: ``x_ij = j / n``."""
    return np.tile(np.arange(1, n + 1) / n, (q, 1))


def simulate_panel(beta, sigma2, q=10, n=15, rng=None):
    """Draw a dataset from the model on the benchmark design."""
    rng = np.random.default_rng(rng)
    x = benchmark_x(q, n)
    u = rng.normal(0.0, math.sqrt(sigma2), size=q)
    p = expit(beta * x + u[:, None])
    y = (rng.random((q, n)) < p).astype(float)
    return PanelDataset(list(x), list(y))


def _check(theta):
    if not isinstance(theta, Theta) or theta.names != GLMM_NAMES:
        raise TypeError(f"expected a GlmmTheta, got {theta!r}")
    return theta.values


def group_kernel(v, beta, data):
    """``g_i(v) = sum_j [y_ij v - log(1 + exp(beta x_ij + v))]``.

    ``v`` has shape ``(..., q)``; column ``i`` is evaluated for group ``i``.
    """
    v = np.asarray(v, dtype=float)
    flat = v.reshape(-1, data.q)
    out = np.empty(flat.shape)
    eta0 = beta * data.x
    for s in range(0, flat.shape[0], _CHUNK):
        blk = flat[s : s + _CHUNK]
        soft = log1pexp(eta0[None, :, :] + blk[:, :, None])
        out[s : s + _CHUNK] = blk * data.ysum - np.sum(soft * data.mask, axis=2)
    return out.reshape(v.shape)


def glmm_complete_loglik(theta, u, data):
    """Complete-data log-likelihood, for one ``u`` or a ``(m, q)`` stack."""
    beta, sigma2 = _check(theta)
    u = np.asarray(u, dtype=float)
    uu = np.atleast_2d(u)
    soft = group_kernel(uu, beta, data) - uu * data.ysum
    val = (
        -0.5 * data.q * math.log(sigma2)
        - np.sum(uu * uu, axis=1) / (2.0 * sigma2)
        + beta * data.xy
        + soft.sum(axis=1)
    )
    return float(val[0]) if u.ndim == 1 else val


def glmm_complete_grad(theta, u, data):
    """Gradient of :func:`glmm_complete_loglik` in ``(beta, sigma2)``.

    The ``beta`` entry is the per-draw score whose Monte Carlo average the
    M-step sets to zero. Returns shape ``(2,)`` or ``(m, 2)``.
    """
    beta, sigma2 = _check(theta)
    u = np.asarray(u, dtype=float)
    uu = np.atleast_2d(u)
    xm = data.x * data.mask
    p = expit(beta * data.x[None, :, :] + uu[:, :, None])
    d_beta = data.xy - np.sum(p * xm, axis=(1, 2))
    d_sigma2 = -0.5 * data.q / sigma2 + np.sum(uu * uu, axis=1) / (2.0 * sigma2**2)
    out = np.column_stack([d_beta, d_sigma2])
    return out[0] if u.ndim == 1 else out


def glmm_target_logdensity(u, theta, data):
    """Log of the unnormalized posterior density of the random effects."""
    beta, sigma2 = _check(theta)
    u = np.asarray(u, dtype=float)
    uu = np.atleast_2d(u)
    val = group_kernel(uu, beta, data).sum(axis=1) - np.sum(uu * uu, axis=1) / (2.0 * sigma2)
    return float(val[0]) if u.ndim == 1 else val


def mh_log_accept(g_proposed, g_current):
    """Log acceptance probability of the prior-proposal independence sampler.

    With target ``exp(g(v)) N(v; 0, sigma2)`` and proposal ``N(0, sigma2)``
    the prior and proposal densities cancel, leaving
    ``min(0, g(v') - g(v))``.
    """
    return np.minimum(0.0, np.asarray(g_proposed) - np.asarray(g_current))


def mh_chain(theta, data, m, burnin=500, u0=None, rng=None):
    """Variable-at-a-time Metropolis-Hastings independence sampler.

    Each sweep visits groups ``1..q`` in order, proposing
    ``u_i' ~ N(0, sigma2)``. Because the target factorizes over groups, the
    coordinate updates within a sweep do not interact. Random numbers are
    consumed as one ``(burnin + m, q)`` block of normals followed by one
    block of uniforms, so output is a pure function of the seed.

    Returns
    -------
    ndarray, shape (m, q)
        Post burn-in draws.
    """
    beta, sigma2 = _check(theta)
    m, burnin = int(m), int(burnin)
    if m < 1 or burnin < 0:
        raise ValueError("need m >= 1 and burnin >= 0")
    rng = np.random.default_rng(rng)
    total = burnin + m
    q = data.q
    u0 = np.zeros(q) if u0 is None else np.asarray(u0, dtype=float).reshape(q)
    props = math.sqrt(sigma2) * rng.standard_normal((total, q))
    log_u = np.log(rng.random((total, q)))
    g_props = group_kernel(props, beta, data)
    g_start = group_kernel(u0[None, :], beta, data)[0]
    # thresholds: accept iff g_prop - log_u > g_current
    keys = g_props - log_u
    out = np.empty((m, q))
    for i in range(q):
        prop_i = props[:, i].tolist()
        key_i = keys[:, i].tolist()
        g_i = g_props[:, i].tolist()
        cur, gcur = float(u0[i]), float(g_start[i])
        col = [0.0] * total
        for s in range(total):
            if key_i[s] > gcur:
                cur, gcur = prop_i[s], g_i[s]
            col[s] = cur
        out[:, i] = col[burnin:]
    return out


def _beta_score(beta, draws, data):
    m = draws.shape[0]
    xm = data.x * data.mask
    p_sum = np.zeros_like(data.x)
    pc_sum = np.zeros_like(data.x)
    pq_sum = np.zeros_like(data.x)
    eta0 = beta * data.x
    for s in range(0, m, _CHUNK):
        p, pc, pq = expit_pair(eta0[None, :, :] + draws[s : s + _CHUNK, :, None])
        p_sum += p.sum(axis=0)
        pc_sum += pc.sum(axis=0)
        pq_sum += pq.sum(axis=0)
    # y - p without cancellation: 1 - p is accumulated as expit(-eta)
    resid = np.where(data.y == 1.0, pc_sum, -p_sum)
    score = np.sum(resid * xm) / m
    slope = -np.sum(pq_sum * xm * data.x) / m
    return score, slope


def solve_beta(draws, data, beta0=0.0, tol=1e-10, max_iter=100, bound=50.0):
    """Root of the Monte Carlo score for ``beta``.

    Newton iteration from ``beta0`` safeguarded by bisection on
    ``[-bound, bound]``; the score is strictly decreasing in ``beta``, so a
    root inside the bracket is unique. The bracket endpoints are only
    evaluated when an iterate tries to leave it.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    lo, hi = -bound, bound
    checked = {lo: False, hi: False}
    beta = float(np.clip(beta0, lo, hi))
    for _ in range(max_iter):
        score, slope = _beta_score(beta, draws, data)
        # under separation the score decays toward zero without a root, so a
        # small score alone is not convergence; the Newton step must be small too
        if abs(score) < tol and slope < 0 and abs(score) <= 1e-8 * (1.0 + abs(beta)) * -slope:
            return beta
        if score > 0:
            lo = beta
        else:
            hi = beta
        new = beta - score / slope if slope < 0 else math.nan
        if not lo < new < hi:
            edge = hi if score > 0 else lo
            if edge in checked and not checked[edge]:
                s_edge, _ = _beta_score(edge, draws, data)
                if (s_edge > 0) == (score > 0):
                    raise ConvergenceError(
                        f"score for beta has no root in [{-bound}, {bound}] "
                        "(quasi-separation in the data)"
                    )
                checked[edge] = True
            new = 0.5 * (lo + hi)
        beta = new
    raise ConvergenceError(f"Newton iteration for beta did not converge in {max_iter} steps")


def glmm_mcem_mstep(draws, data, beta0=0.0):
    """Maximize the Monte Carlo Q-function given ``(m, q)`` random-effect draws."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    m, q = draws.shape
    if q != data.q:
        raise ValueError(f"draws have {q} columns, data has {data.q} groups")
    if m < 2:
        raise ValueError(f"need at least 2 draws, got {m}")
    sigma2 = float(np.mean(draws * draws))
    if not sigma2 > 0:
        raise DomainError("all random-effect draws are zero: sigma2 update is degenerate", "sigma2")
    beta = solve_beta(draws, data, beta0)
    return GlmmTheta(beta, sigma2)


def _group_modes(beta, sigma2, data, tol=1e-10, max_iter=2000):
    # log integrand k(v) = g(v) - v^2 / (2 sigma2) is strictly concave and
    # k'(v) = ysum - sum_j p_ij - v / sigma2 has its root in [lo, hi]
    lo = sigma2 * (data.ysum - data.n)
    hi = sigma2 * data.ysum
    v = np.clip(np.zeros(data.q), lo, hi)
    eta0 = beta * data.x
    for _ in range(max_iter):
        p = expit(eta0 + v[:, None]) * data.mask
        d1 = data.ysum - p.sum(axis=1) - v / sigma2
        d2 = -np.sum(p * (1.0 - p), axis=1) - 1.0 / sigma2
        lo = np.where(d1 > 0, v, lo)
        hi = np.where(d1 < 0, v, hi)
        new = v - d1 / d2
        outside = ~((new > lo) & (new < hi))
        new = np.where(outside & (d1 != 0), 0.5 * (lo + hi), new)
        step = new - v
        v = new
        if np.all(np.abs(step) < tol * (1.0 + np.abs(v))):
            p = expit(eta0 + v[:, None]) * data.mask
            d2 = -np.sum(p * (1.0 - p), axis=1) - 1.0 / sigma2
            return v, d2
    raise ConvergenceError("mode search for the quadrature did not converge")


def _quadrature_nodes(theta, data, nodes):
    beta, sigma2 = _check(theta)
    if nodes < 10:
        raise ValueError(f"need at least 10 quadrature nodes, got {nodes}")
    mode, d2 = _group_modes(beta, sigma2, data)
    scale = 1.0 / np.sqrt(-d2)
    z, w = hermgauss(int(nodes))
    v = mode[:, None] + math.sqrt(2.0) * scale[:, None] * z[None, :]
    # log of integrand exp(g(v)) N(v; 0, sigma2) at each node, (q, nodes)
    logk = (
        beta * data.xy_group[:, None]
        + group_kernel(v.T, beta, data).T
        - v * v / (2.0 * sigma2)
        - 0.5 * math.log(2.0 * math.pi * sigma2)
    )
    logw = np.log(w) + z * z + np.log(math.sqrt(2.0) * scale)[:, None]
    return v, logw + logk


def glmm_loglik_quadrature(theta, data, nodes=20):
    """Log-likelihood by adaptive Gauss-Hermite quadrature, one group at a time.

    Nodes are centred at the mode of each group's integrand and scaled by
    the inverse square root of its negative second derivative there.
    """
    _, logterms = _quadrature_nodes(theta, data, nodes)
    return float(np.sum(logsumexp(logterms, axis=1)))


def glmm_posterior_moments(theta, data, nodes=40):
    """Posterior mean and second moment of each ``u_i`` by quadrature."""
    v, logterms = _quadrature_nodes(theta, data, nodes)
    wts = np.exp(logterms - logsumexp(logterms, axis=1, keepdims=True))
    return np.sum(wts * v, axis=1), np.sum(wts * v * v, axis=1)


def glmm_em_step_quadrature(theta, data, nodes=40):
    """Deterministic EM update with quadrature expectations (oracle for MCEM)."""
    v, logterms = _quadrature_nodes(theta, data, nodes)
    wts = np.exp(logterms - logsumexp(logterms, axis=1, keepdims=True))
    sigma2 = float(np.mean(np.sum(wts * v * v, axis=1)))
    xm = data.x * data.mask

    def score(b):
        p = expit(b * data.x[:, :, None] + v[:, None, :])  # (q, n, nodes)
        ep = np.sum(p * wts[:, None, :], axis=2)
        epp = np.sum(p * (1 - p) * wts[:, None, :], axis=2)
        return data.xy - np.sum(ep * xm), -np.sum(epp * xm * data.x)

    b = theta.beta
    for _ in range(100):
        s, ds = score(b)
        step = s / ds
        b -= step
        if abs(step) < 1e-12 * (1 + abs(b)):
            return GlmmTheta(b, sigma2)
    raise ConvergenceError("quadrature EM update for beta did not converge")


def glmm_direct_mle(data, nodes=20, max_eval=10_000):
    """Maximize the quadrature likelihood over ``(beta, log sigma2)`` by Nelder-Mead."""
    if np.all(data.y[data.mask] == 1) or np.all(data.y[data.mask] == 0):
        raise ValueError("responses are all equal; the likelihood has no maximizer")

    def objective(z):
        return -glmm_loglik_quadrature(GlmmTheta(z[0], math.exp(z[1])), data, nodes)

    res = minimize(
        objective,
        np.zeros(2),
        method="Nelder-Mead",
        bounds=[(-_BETA_BOUND, _BETA_BOUND), _LOG_SIGMA2_BOUNDS],
        options={"xatol": 1e-8, "fatol": 1e-8, "maxfev": max_eval, "maxiter": max_eval},
    )
    if not res.success:
        raise ConvergenceError(f"direct maximization failed: {res.message}")
    return GlmmTheta(res.x[0], math.exp(res.x[1]))


class LogitNormalModel(HierarchicalModel):
    """Capability record for the logit-normal GLMM.

    Each E-step runs a fresh chain from ``u = 0`` with ``burnin`` discarded
    sweeps. ``loglik`` uses adaptive Gauss-Hermite quadrature.
    """

    names = GLMM_NAMES
    positive = GLMM_POSITIVE
    exact_sampling = False

    def __init__(self, burnin=500, nodes=20):
        self.burnin = int(burnin)
        self.nodes = int(nodes)

    def make_theta(self, values):
        return GlmmTheta(*values)

    def loglik(self, theta, data):
        return glmm_loglik_quadrature(theta, data, self.nodes)

    def sample(self, theta, data, m, rng):
        return mh_chain(theta, data, m, self.burnin, None, rng)

    def mstep(self, draws, data, theta=None):
        beta0 = 0.0 if theta is None else theta.beta
        return glmm_mcem_mstep(draws, data, beta0)

    def complete_loglik(self, theta, draws, data):
        return glmm_complete_loglik(theta, np.atleast_2d(draws), data)
