"""Monte Carlo EM drivers.

Plain MCEM with constant or polynomially growing sample sizes, stable
MCEM with nested truncation boxes and reinitialization, the
replicate-based swamping rule for adaptive sample sizes, and the
ascent check used to decide whether a proposed update should be
accepted or the Monte Carlo sample extended.
"""

import math
import time
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._stats import batch_means_se, iid_se, norm_ppf, two_sided_z
from .exceptions import ConfigError
from .kernel import (
    IterationRecord,
    StoppingConfig,
    Trace,
    _loglik_or_nan,
    require,
    stopping_consecutive,
    stopping_relative_change,
)


@dataclass(frozen=True)
class ScheduleConfig:
    """Monte Carlo sample size per iteration.

    ``constant``: ``m_t = m0``. ``polynomial``: ``m_t = ceil(m0 (1 + t)^alpha)``
    with ``alpha > 1`` so that ``sum_t 1 / m_t`` is finite.
    """

    kind: str = "constant"
    m0: int = 10_000
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if int(self.m0) != self.m0 or self.m0 < 2:
            raise ConfigError(f"m0 must be an integer >= 2, got {self.m0!r}")
        if self.kind == "polynomial":
            if self.alpha is None or not self.alpha > 1:
                raise ConfigError(
                    f"polynomial schedule needs alpha > 1 for a summable 1/m_t, got {self.alpha!r}"
                )

    @property
    def summable(self):
        """True when the reciprocal sample sizes have a finite sum."""
        return self.kind == "polynomial"


def schedule_size(cfg, t):
    """Monte Carlo sample size for the update computed at iteration ``t``."""
    if t < 0:
        raise ValueError(f"iteration index must be >= 0, got {t}")
    if cfg.kind == "constant":
        return int(cfg.m0)
    return int(math.ceil(cfg.m0 * (1.0 + t) ** cfg.alpha))


def _mcem_update(model, theta, data, m, rng):
    if callable(getattr(model, "mcem_step", None)):
        return model.mcem_step(theta, data, m, rng)
    require(model, "sample", "mstep")
    return model.mstep(model.sample(theta, data, m, rng), data, theta)


def run_mcem(model, theta0, schedule=None, stop=None, rng=None, data=None):
    """Plain Monte Carlo EM.

    Iterates ``theta <- mcem_step(theta, m_t)`` and stops when the relative
    change rule holds for ``stop.consecutive`` iterations in a row or after
    ``stop.max_iter`` updates.

    Parameters
    ----------
    model : HierarchicalModel
    theta0 : Theta
    schedule : ScheduleConfig, optional
    stop : StoppingConfig, optional
    rng : numpy.random.Generator or int
    data : object

    Returns
    -------
    Trace
    """
    return stable_mcem_run(model, None, schedule, stop, rng, data, theta0=theta0)


@dataclass(frozen=True)
class StableConfig:
    """Nested boxes ``K_p`` around ``theta0`` for stable MCEM.

    ``K_p = {theta : |T_i(theta_i) - T_i(theta0_i)| <= r0_i * c**p}`` where
    ``T_i`` is the identity or the natural log. ``transform`` defaults to
    log for positive components.
    """

    theta0: object
    r0: object = 1.0
    c: float = 2.0
    transform: Optional[Sequence[str]] = None

    def __post_init__(self):
        d = len(self.theta0)
        r0 = np.broadcast_to(np.asarray(self.r0, dtype=float), (d,)).copy()
        if not np.all(r0 > 0):
            raise ConfigError(f"r0 must be positive, got {self.r0!r}")
        if not self.c > 1:
            raise ConfigError(f"growth factor c must be > 1, got {self.c!r}")
        transform = self.transform
        if transform is None:
            transform = tuple("log" if pos else "identity" for pos in self.theta0.positive)
        transform = tuple(transform)
        if len(transform) != d:
            raise ConfigError("one transform per component required")
        for name, tr, pos in zip(self.theta0.names, transform, self.theta0.positive):
            if tr not in ("identity", "log"):
                raise ConfigError(f"unknown transform {tr!r} for {name}")
            if tr == "log" and not pos:
                raise ConfigError(f"log transform needs a positive component, {name} is not")
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "transform", transform)

    def transformed(self, theta):
        v = np.asarray(theta, dtype=float)
        out = v.copy()
        for i, tr in enumerate(self.transform):
            if tr == "log":
                out[i] = math.log(v[i]) if v[i] > 0 else -math.inf
        return out


def in_k_set(theta, p, cfg):
    """Membership of ``theta`` in the closed box ``K_p``."""
    if p < 0:
        raise ValueError(f"p must be >= 0, got {p}")
    dist = np.abs(cfg.transformed(theta) - cfg.transformed(cfg.theta0))
    return bool(np.all(dist <= cfg.r0 * cfg.c**p))


def stable_mcem_run(model, cfg, schedule=None, stop=None, rng=None, data=None, theta0=None):
    """Stable MCEM: reinitialize at ``theta0`` whenever an update leaves ``K_{p_t}``.

    With ``cfg=None`` no truncation is applied and this is plain MCEM
    started at ``theta0``. Each record carries the cumulative
    reinitialization count ``p``.
    """
    schedule = ScheduleConfig() if schedule is None else schedule
    stop = StoppingConfig() if stop is None else stop
    rng = np.random.default_rng(rng)
    if cfg is not None:
        theta0 = cfg.theta0
        if not in_k_set(theta0, 0, cfg):
            raise ConfigError("theta0 must lie in K_0")
    if theta0 is None:
        raise ValueError("a starting value is required")
    trace = Trace(names=tuple(theta0.names), theta0=theta0)
    theta, p = theta0, 0
    history = []
    for t in range(stop.max_iter):
        start = time.perf_counter()
        m = schedule_size(schedule, t)
        proposal = _mcem_update(model, theta, data, m, rng)
        reset = not (cfg is None or in_k_set(proposal, p, cfg))
        if reset:
            new, p = theta0, p + 1
        else:
            new = proposal
        loglik = _loglik_or_nan(model, new, data)
        elapsed = (time.perf_counter() - start) * 1e3
        trace.append(IterationRecord(t + 1, new, loglik, m, p, elapsed))
        # a reset repeats theta0 and must not read as convergence
        history.append(not reset and stopping_relative_change(theta, new, stop.delta, stop.epsilon))
        theta = new
        if stopping_consecutive(history, stop.consecutive):
            trace.converged = True
            break
    return trace


def require_summable(schedule):
    """Precondition of the stable MCEM convergence guarantee."""
    if not schedule.summable:
        raise ConfigError(
            f"{schedule.kind} schedule does not have summable 1/m_t; "
            "the almost-sure convergence guarantee needs a polynomial schedule"
        )


@dataclass(frozen=True)
class AdaptiveConfig:
    """Replicate-based swamping rule for growing the Monte Carlo sample size."""

    batches: int = 10
    conf: float = 0.95
    growth: float = 1.5
    m_start: int = 1_000
    m_cap: int = 1_000_000

    def __post_init__(self):
        if int(self.batches) != self.batches or self.batches < 2:
            raise ConfigError(f"batches must be an integer >= 2, got {self.batches!r}")
        if not 0 < self.conf < 1:
            raise ConfigError(f"conf must lie in (0, 1), got {self.conf!r}")
        if not self.growth > 1:
            raise ConfigError(f"growth must be > 1, got {self.growth!r}")
        if self.m_start > self.m_cap:
            raise ConfigError("m_start must not exceed m_cap")


@dataclass(frozen=True)
class AdaptStep:
    theta_next: object
    m_next: int
    swamped: bool
    capped: bool = False


def booth_hobert_adapt(model, theta, m, cfg, rng, data):
    """One MCEM update with the swamping check.

    ``cfg.batches`` independent sub-updates with ``m // batches`` draws each
    give a componentwise mean and standard error for the EM update. The
    update is swamped when every component of ``theta`` lies inside its
    normal interval; the sample size then grows by ``cfg.growth`` (capped
    at ``cfg.m_cap``). The returned iterate is a fresh update using all
    ``m`` draws.
    """
    B = cfg.batches
    if m < 2 * B:
        raise ValueError(f"need m >= {2 * B} for {B} sub-updates, got {m}")
    subs = np.vstack(
        [np.asarray(_mcem_update(model, theta, data, m // B, rng), dtype=float) for _ in range(B)]
    )
    centre = subs.mean(axis=0)
    se = subs.std(axis=0, ddof=1) / math.sqrt(B)
    z = two_sided_z(cfg.conf)
    swamped = bool(np.all(np.abs(np.asarray(theta) - centre) <= z * se))
    capped = False
    m_next = m
    if swamped:
        m_next = min(int(math.ceil(m * cfg.growth)), cfg.m_cap)
        capped = m_next == m
    theta_next = _mcem_update(model, theta, data, m, rng)
    return AdaptStep(theta_next, max(m_next, m), swamped, capped)


def run_mcem_adaptive(model, theta0, cfg=None, stop=None, rng=None, data=None):
    """MCEM whose sample size grows each time an update is swamped."""
    cfg = AdaptiveConfig() if cfg is None else cfg
    stop = StoppingConfig() if stop is None else stop
    rng = np.random.default_rng(rng)
    trace = Trace(names=tuple(theta0.names), theta0=theta0)
    theta, m = theta0, int(cfg.m_start)
    history = []
    for t in range(stop.max_iter):
        start = time.perf_counter()
        step = booth_hobert_adapt(model, theta, m, cfg, rng, data)
        if step.capped:
            msg = f"iteration {t + 1}: swamped at the sample size cap m={m}"
            trace.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        loglik = _loglik_or_nan(model, step.theta_next, data)
        elapsed = (time.perf_counter() - start) * 1e3
        trace.append(IterationRecord(t + 1, step.theta_next, loglik, m, 0, elapsed))
        history.append(stopping_relative_change(theta, step.theta_next, stop.delta, stop.epsilon))
        theta, m = step.theta_next, step.m_next
        if stopping_consecutive(history, stop.consecutive):
            trace.converged = True
            break
    return trace


def ascent_check(model, theta, theta_prop, draws, conf=0.95, data=None, exact=None):
    """Decide whether ``theta_prop`` improves the Q-function with confidence ``conf``.

    Per-draw differences of the complete-data log-likelihood estimate
    ``Q(theta_prop | theta) - Q(theta | theta)``. The lower one-sided bound
    ``mean - z * se`` must be positive to accept.

    Returns
    -------
    str
        ``"accept"`` or ``"extend"`` (append draws and recompute).
    """
    require(model, "complete_loglik")
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] < 10:
        raise ValueError(f"need at least 10 draws, got {draws.shape[0]}")
    d = model.complete_loglik(theta_prop, draws, data) - model.complete_loglik(theta, draws, data)
    exact = model.exact_sampling if exact is None else exact
    gain = float(np.mean(d))
    if exact:
        se = float(iid_se(d))
    else:
        se = float(batch_means_se(d)[1])
    z = norm_ppf(conf)
    return "accept" if gain - z * se > 0 else "extend"


def ascent_gain(model, theta, theta_prop, draws, data=None):
    """Monte Carlo estimate of ``Q(theta_prop | theta) - Q(theta | theta)``."""
    d = model.complete_loglik(theta_prop, draws, data) - model.complete_loglik(theta, draws, data)
    return float(np.mean(d))


ALGORITHMS = ("em", "em-gradient", "mcem", "stable-mcem", "mcem-adaptive")


def run_algorithm(model, data, algorithm, theta0, *, schedule=None, stop=None,
                  stable=None, adaptive=None, rng=None):
    """Dispatch to the driver named by ``algorithm`` and return its trace.

    ``stable`` is a :class:`StableConfig` (or a dict of its keyword
    arguments other than ``theta0``); ``adaptive`` an :class:`AdaptiveConfig`.
    """
    from .kernel import iterate, run_em

    stop = StoppingConfig() if stop is None else stop
    if algorithm == "em":
        return run_em(model, theta0, stop, data)
    if algorithm == "em-gradient":
        require(model, "em_gradient_step")
        return iterate(lambda th, t: model.em_gradient_step(th, data), model, theta0, stop, data)
    if algorithm == "mcem":
        return run_mcem(model, theta0, schedule, stop, rng, data)
    if algorithm == "stable-mcem":
        if stable is None or isinstance(stable, dict):
            stable = StableConfig(theta0, **(stable or {}))
        return stable_mcem_run(model, stable, schedule, stop, rng, data)
    if algorithm == "mcem-adaptive":
        return run_mcem_adaptive(model, theta0, adaptive, stop, rng, data)
    raise ConfigError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
