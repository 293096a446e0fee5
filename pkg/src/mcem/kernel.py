"""Model-agnostic EM machinery.

Holds the parameter vector type, the trace records, the stopping rules and
the deterministic EM driver. Models plug in by subclassing
:class:`HierarchicalModel` and providing whichever of ``loglik``,
``em_step``, ``sample`` / ``mstep`` they can compute.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import CapabilityError, ConfigError, DomainError


class Theta:
    """Immutable named parameter vector.

    Each component is either unconstrained (means, regression
    coefficients) or positive (variance components). Positive components
    must be strictly greater than zero; construction fails with a
    :class:`DomainError` naming the first offending component otherwise.

    Parameters
    ----------
    values : array_like of float
    names : sequence of str
    positive : sequence of bool, optional
        Defaults to all components unconstrained.
    """

    __slots__ = ("_values", "names", "positive")

    def __init__(self, values, names, positive=None):
        names = tuple(str(n) for n in names)
        if positive is None:
            positive = (False,) * len(names)
        self._set(values, names, tuple(bool(p) for p in positive))

    def _set(self, values, names, positive):
        values = np.array(values, dtype=float).reshape(-1)
        if len(names) != values.size or len(positive) != values.size:
            raise ValueError(
                f"got {values.size} values for {len(names)} names "
                f"and {len(positive)} positivity flags"
            )
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate component names in {names}")
        for name, v, pos in zip(names, values, positive):
            if not math.isfinite(v):
                raise DomainError(f"component {name!r} is not finite ({v!r})", name)
            if pos and not v > 0.0:
                raise DomainError(f"component {name!r} must be > 0, got {v!r}", name)
        values.setflags(write=False)
        self._values = values
        self.names = names
        self.positive = positive

    def with_values(self, values):
        """Return a parameter of the same type and layout with new values."""
        new = object.__new__(type(self))
        new._set(values, self.names, self.positive)
        return new

    @property
    def values(self):
        return self._values

    def __array__(self, dtype=None, copy=None):
        return np.array(self._values, dtype=dtype)

    def __len__(self):
        return self._values.size

    def __iter__(self):
        return iter(self._values.tolist())

    def __getitem__(self, key):
        if isinstance(key, str):
            try:
                return float(self._values[self.names.index(key)])
            except ValueError:
                raise KeyError(key) from None
        return float(self._values[key])

    def as_dict(self):
        return dict(zip(self.names, self._values.tolist()))

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return self.names == other.names and np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash((self.names, self._values.tobytes()))

    def __repr__(self):
        body = ", ".join(f"{n}={v!r}" for n, v in zip(self.names, self._values.tolist()))
        return f"{type(self).__name__}({body})"


class HierarchicalModel:
    """Capability record for a two-stage hierarchical model.

    Subclasses override the capabilities they support. ``loglik`` and
    ``em_step`` are optional; ``sample`` plus ``mstep`` give the Monte Carlo
    EM update, and ``complete_loglik`` evaluates ``log f(y, u; theta)`` per
    draw. ``exact_sampling`` is False when ``sample`` returns Markov chain
    output rather than iid draws.
    """

    names: tuple = ()
    positive: tuple = ()
    exact_sampling = True

    loglik = None
    em_step = None
    sample = None
    mstep = None
    complete_loglik = None

    def make_theta(self, values):
        return Theta(values, self.names, self.positive)

    def mcem_step(self, theta, data, m, rng):
        """One Monte Carlo EM update using ``m`` draws of the random effects."""
        require(self, "sample", "mstep")
        draws = self.sample(theta, data, m, rng)
        return self.mstep(draws, data, theta)


def require(model, *capabilities):
    """Raise :class:`CapabilityError` unless ``model`` provides every capability."""
    missing = [c for c in capabilities if not callable(getattr(model, c, None))]
    if missing:
        raise CapabilityError(
            f"{type(model).__name__} does not provide {', '.join(missing)}"
        )


@dataclass(frozen=True)
class IterationRecord:
    """State after update ``t``.

    ``loglik`` is NaN when the model cannot evaluate it; ``m`` is 0 for
    deterministic updates and ``p`` counts stable-MCEM reinitializations.
    """

    t: int
    theta: Theta
    loglik: float = math.nan
    m: int = 0
    p: int = 0
    wall_ms: float = 0.0


@dataclass
class Trace:
    """Sequence of iteration records produced by one run.

    ``theta0`` is the starting value; ``records[k]`` holds the iterate after
    update ``k + 1``.
    """

    names: tuple
    theta0: Optional[Theta] = None
    records: list = field(default_factory=list)
    converged: bool = False
    warnings: list = field(default_factory=list)

    def append(self, record):
        if self.records:
            last = self.records[-1]
            if record.t <= last.t:
                raise ValueError(f"iteration index {record.t} does not follow {last.t}")
            if record.p < last.p:
                raise ValueError("reinitialization count cannot decrease")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def final(self):
        return self.records[-1].theta if self.records else self.theta0

    def thetas(self):
        """Iterates as an array of shape ``(len(trace), d)``."""
        if not self.records:
            return np.empty((0, len(self.names)))
        return np.vstack([r.theta.values for r in self.records])

    def logliks(self):
        return np.array([r.loglik for r in self.records], dtype=float)


@dataclass(frozen=True)
class StoppingConfig:
    """Relative-change stopping rule required for ``consecutive`` iterations."""

    delta: float = 1e-3
    epsilon: float = 1e-6
    consecutive: int = 3
    max_iter: int = 500

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"delta must be > 0, got {self.delta!r}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon!r}")
        if int(self.consecutive) != self.consecutive or self.consecutive < 1:
            raise ConfigError(f"consecutive must be an integer >= 1, got {self.consecutive!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError(f"max_iter must be an integer >= 1, got {self.max_iter!r}")


def relative_change(theta_prev, theta_curr, delta):
    """``max_i |curr_i - prev_i| / (|curr_i| + delta)``."""
    prev = np.asarray(theta_prev, dtype=float).reshape(-1)
    curr = np.asarray(theta_curr, dtype=float).reshape(-1)
    if prev.shape != curr.shape:
        raise ValueError(f"dimension mismatch: {prev.size} vs {curr.size}")
    if prev.size == 0:
        return 0.0
    return float(np.max(np.abs(curr - prev) / (np.abs(curr) + delta)))


def stopping_relative_change(theta_prev, theta_curr, delta, epsilon):
    """True iff the largest relative component change is strictly below ``epsilon``."""
    if not (delta > 0 and epsilon > 0):
        raise ValueError("delta and epsilon must be positive")
    return relative_change(theta_prev, theta_curr, delta) < epsilon


def stopping_consecutive(history, k):
    """True iff the last ``k`` entries of ``history`` are all true."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    history = list(history)
    return len(history) >= k and all(history[-k:])


def _loglik_or_nan(model, theta, data):
    if callable(getattr(model, "loglik", None)):
        return float(model.loglik(theta, data))
    return math.nan


def iterate(update, model, theta0, stop, data, m_of_t=None):
    """Drive a fixed-point iteration and record a trace.

    ``update(theta, t)`` returns the next iterate. Used by the deterministic
    drivers; the Monte Carlo drivers in :mod:`mcem.engine` share the same
    bookkeeping through this function.
    """
    trace = Trace(names=tuple(theta0.names), theta0=theta0)
    history = []
    theta = theta0
    for t in range(stop.max_iter):
        start = time.perf_counter()
        new = update(theta, t)
        loglik = _loglik_or_nan(model, new, data)
        elapsed = (time.perf_counter() - start) * 1e3
        m = 0 if m_of_t is None else m_of_t(t)
        trace.append(IterationRecord(t + 1, new, loglik, m, 0, elapsed))
        history.append(stopping_relative_change(theta, new, stop.delta, stop.epsilon))
        theta = new
        if stopping_consecutive(history, stop.consecutive):
            trace.converged = True
            break
    return trace


def run_em(model, theta0, stop=None, data=None):
    """Deterministic EM: repeated ``model.em_step`` until the stopping rule holds.

    Parameters
    ----------
    model : HierarchicalModel
        Must provide ``em_step``.
    theta0 : Theta
    stop : StoppingConfig, optional
    data : object
        Dataset understood by ``model``.

    Returns
    -------
    Trace
        ``trace.converged`` is False when ``max_iter`` was reached first.
    """
    require(model, "em_step")
    stop = StoppingConfig() if stop is None else stop
    return iterate(lambda th, t: model.em_step(th, data), model, theta0, stop, data)
