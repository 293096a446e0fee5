"""Convergence analytics over traces and trace serialization."""

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .engine import ScheduleConfig, run_mcem
from .kernel import IterationRecord, StoppingConfig, Theta, Trace

# distances below this are treated as numerically converged
RATE_FLOOR = 1e-9


@dataclass(frozen=True)
class RateReport:
    ratios: np.ndarray
    median_rate: float
    cv: float


def rate_estimate(trace, theta_star, window=10, floor=RATE_FLOOR):
    """Empirical linear convergence rate of a trace toward ``theta_star``.

    Uses ``r_t = |theta_{t+1} - theta*| / |theta_t - theta*|`` over the last
    ``window`` ratios whose distances both exceed ``floor``. A linearly
    convergent sequence gives a stable ratio (small ``cv``); a
    superlinear one drives the ratios toward zero.
    """
    if window < 3:
        raise ValueError(f"window must be >= 3, got {window}")
    path = trace.thetas() if isinstance(trace, Trace) else np.atleast_2d(np.asarray(trace, float))
    if isinstance(trace, Trace) and trace.theta0 is not None:
        path = np.vstack([np.asarray(trace.theta0, dtype=float), path])
    dist = np.linalg.norm(path - np.asarray(theta_star, dtype=float), axis=1)
    usable = np.flatnonzero(dist > floor)
    # ratios need consecutive iterates both above the floor
    pairs = [k for k in usable if k + 1 < dist.size and dist[k + 1] > floor]
    if len(pairs) < window:
        raise ValueError(
            f"only {len(pairs)} usable iterations above the floor {floor}, need {window}"
        )
    idx = np.array(pairs[-window:])
    ratios = dist[idx + 1] / dist[idx]
    mean = float(np.mean(ratios))
    cv = float(np.std(ratios, ddof=1) / mean) if mean > 0 else math.inf
    return RateReport(ratios, float(np.median(ratios)), cv)


def em_jacobian(em_step, theta_star, data, rel_step=1e-5):
    """Central-difference Jacobian of the EM map at ``theta_star``."""
    base = np.asarray(theta_star, dtype=float)
    d = base.size
    jac = np.empty((d, d))
    for j in range(d):
        h = rel_step * (1.0 + abs(base[j]))
        up, dn = base.copy(), base.copy()
        up[j] += h
        dn[j] -= h
        f_up = np.asarray(em_step(theta_star.with_values(up), data), dtype=float)
        f_dn = np.asarray(em_step(theta_star.with_values(dn), data), dtype=float)
        jac[:, j] = (f_up - f_dn) / (2.0 * h)
    return jac


def spectral_radius(matrix):
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


@dataclass(frozen=True)
class HitProbResult:
    m: int
    runs: int
    T0: int
    epsilon: float
    hits: int
    fraction: float


def standardized_distance(path, theta_star):
    """Euclidean distance after dividing each component by ``|theta*_i| + 1``."""
    star = np.asarray(theta_star, dtype=float)
    return np.linalg.norm((np.atleast_2d(path) - star) / (np.abs(star) + 1.0), axis=1)


def hit_probability(model, theta0, theta_star, m, T0, epsilon, R, rng, data,
                    include_start=False, norm="standardized"):
    """Fraction of constant-``m`` MCEM runs that enter the ``epsilon`` ball.

    Runs ``R`` independent MCEM sequences of ``T0`` updates each and counts
    those with ``|theta_t - theta*| < epsilon`` (standardized distance) for
    some ``t <= T0``. The starting value is counted only when
    ``include_start`` is set. ``norm="euclidean"`` drops the
    standardization. Each run owns a child stream spawned from ``rng``.
    """
    if norm not in ("standardized", "euclidean"):
        raise ValueError(f"norm must be 'standardized' or 'euclidean', got {norm!r}")
    if R < 1:
        raise ValueError(f"need at least one run, got R={R}")
    if T0 < 1:
        raise ValueError(f"need T0 >= 1, got {T0}")
    hits = 0
    for child in _spawn(rng, R):
        tr = run_mcem(
            model, theta0, ScheduleConfig("constant", int(m)),
            StoppingConfig(max_iter=int(T0), epsilon=1e-300), child, data,
        )
        path = tr.thetas()
        if include_start:
            path = np.vstack([np.asarray(theta0, dtype=float), path])
        if norm == "standardized":
            dist = standardized_distance(path, theta_star)
        else:
            dist = np.linalg.norm(path - np.asarray(theta_star, dtype=float), axis=1)
        if np.any(dist < epsilon):
            hits += 1
    return HitProbResult(int(m), int(R), int(T0), float(epsilon), hits, hits / R)


def hit_paths(model, theta0, m, T0, R, rng, data):
    """The ``R`` MCEM paths used by :func:`hit_probability`, as an ``(R, T0, d)`` array."""
    out = []
    for child in _spawn(rng, R):
        tr = run_mcem(
            model, theta0, ScheduleConfig("constant", int(m)),
            StoppingConfig(max_iter=int(T0), epsilon=1e-300), child, data,
        )
        out.append(tr.thetas())
    return np.stack(out)


def mcem_error_scaling(model, theta, sizes, replicates, rng, data):
    """Mean absolute deviation of the MCEM update from the EM update per size.

    Returns an array of shape ``(len(sizes), d)``.
    """
    target = np.asarray(model.em_step(theta, data), dtype=float)
    rows = []
    streams = _spawn(rng, len(sizes))
    for m, child in zip(sizes, streams):
        dev = [
            np.abs(np.asarray(model.mcem_step(theta, data, int(m), child), dtype=float) - target)
            for _ in range(replicates)
        ]
        rows.append(np.mean(dev, axis=0))
    return np.array(rows)


def loglog_slope(sizes, deviations):
    """Least-squares slope of ``log(deviation)`` against ``log(m)``, per column."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.atleast_2d(np.asarray(deviations, dtype=float)).T)
    return np.polyfit(x, y.T, 1)[0]


def _spawn(rng, n):
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    return [np.random.default_rng(s) for s in seq.spawn(n)]


def format_float(x):
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


def trace_to_csv(trace):
    buf = io.StringIO()
    names = list(trace.names)
    buf.write(",".join(["t", "m", "p", "loglik"] + names) + "\n")
    for rec in trace.records:
        fields = [str(rec.t), str(rec.m), str(rec.p), format_float(rec.loglik)]
        fields += [format_float(v) for v in rec.theta.values]
        buf.write(",".join(fields) + "\n")
    return buf.getvalue()


def trace_write(trace, path):
    """Write ``t,m,p,loglik,<components>`` rows with ``\\n`` line endings."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(trace_to_csv(trace))
    except OSError as exc:
        raise OSError(f"cannot write trace to {os.fspath(path)!r}: {exc}") from exc


def trace_read(path, positive=None):
    """Read a trace written by :func:`trace_write`.

    ``wall_ms`` is not serialized and reads back as 0.
    """
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read trace from {os.fspath(path)!r}: {exc}") from exc
    if not rows or rows[0][:4] != ["t", "m", "p", "loglik"]:
        raise ValueError(f"{os.fspath(path)!r} is not a trace file")
    names = tuple(rows[0][4:])
    trace = Trace(names=names)
    for row in rows[1:]:
        theta = Theta([float(v) for v in row[4:]], names, positive)
        trace.append(IterationRecord(int(row[0]), theta, float(row[3]), int(row[1]), int(row[2])))
    return trace


PLOT_SCRIPT = '''"""Plot a trace CSV: one panel per parameter plus the log-likelihood."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {path!r}
with open(path) as fh:
    rows = list(csv.DictReader(fh))
cols = [c for c in rows[0] if c not in ("t", "m", "p")]
t = [int(r["t"]) for r in rows]
fig, axes = plt.subplots(1, len(cols), figsize=(4 * len(cols), 3))
for ax, col in zip(axes, cols):
    ax.plot(t, [float(r[col]) for r in rows], "-")
    ax.set_xlabel("iteration")
    ax.set_title(col)
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=120)
'''


def plot_script(trace_path):
    """Source of a standalone matplotlib script that plots a trace CSV."""
    return PLOT_SCRIPT.format(path=os.fspath(trace_path))
