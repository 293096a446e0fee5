"""Command line front end.

Runs are described by a flat ``key = value`` config file; ``--seed`` and
``--out`` override the matching keys. Exit codes: 0 success, 1 numerical
or convergence failure, 2 configuration error.
"""

import argparse
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .datasets import read_grouped_csv, read_panel_csv, write_grouped_csv, write_panel_csv
from .diagnostics import (
    em_jacobian,
    format_float,
    hit_probability,
    mcem_error_scaling,
    plot_script,
    rate_estimate,
    spectral_radius,
    trace_to_csv,
)
from .engine import ALGORITHMS, AdaptiveConfig, ScheduleConfig, StableConfig, run_algorithm
from .exceptions import ConfigError, ConvergenceError, DomainError
from .glmm import GlmmTheta, LogitNormalModel, glmm_direct_mle, simulate_panel
from .kernel import StoppingConfig, run_em
from .lmm import LinearMixedModel, LmmTheta, bulls

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
MC_ALGORITHMS = ("mcem", "stable-mcem", "mcem-adaptive")
EXPERIMENTS = ("hit-prob", "rate", "mcem-error-scaling")


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError("expected an integer")
    return int(value)


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _ints(text):
    return tuple(_int(v) for v in text.split(","))


# key: (parser, default, description); a default of None means "see description"
KEYS = {
    "model": (_choice("lmm", "glmm"), None, "lmm or glmm (required)"),
    "algorithm": (_choice(*ALGORITHMS), "em", "|".join(ALGORITHMS)),
    "theta0": (_floats, None, "comma-separated start; lmm 55,45,260 / glmm 2,1"),
    "dataset": (str, None, "builtin-bulls | synthetic | path to CSV; lmm builtin-bulls / glmm synthetic"),
    "synth_q": (_int, 10, "synthetic GLMM: number of groups"),
    "synth_n": (_int, 15, "synthetic GLMM: observations per group (x_ij = j/n)"),
    "synth_beta": (float, 6.132, "synthetic GLMM: true beta"),
    "synth_sigma2": (float, 1.766, "synthetic GLMM: true sigma2"),
    "synth_seed": (_int, 27, "synthetic GLMM: data seed"),
    "schedule": (_choice("constant", "polynomial"), "constant", "Monte Carlo sample-size schedule"),
    "m0": (_int, 10_000, "initial Monte Carlo sample size"),
    "alpha": (float, 2.0, "polynomial schedule exponent (> 1)"),
    "delta": (float, 1e-3, "stopping rule offset"),
    "epsilon": (float, 1e-6, "stopping rule tolerance"),
    "consecutive": (_int, 3, "iterations the stopping rule must hold in a row"),
    "max_iter": (_int, 500, "iteration limit"),
    "r0": (_floats, (1.0,), "stable MCEM: half-width of K_0 (scalar or per component)"),
    "c": (float, 2.0, "stable MCEM: growth factor of K_p"),
    "batches": (_int, 10, "adaptive MCEM: sub-updates per iteration"),
    "conf": (float, 0.95, "adaptive MCEM: confidence level"),
    "growth": (float, 1.5, "adaptive MCEM: sample-size multiplier"),
    "m_cap": (_int, 1_000_000, "adaptive MCEM: sample-size cap"),
    "burnin": (_int, 500, "GLMM sampler burn-in sweeps"),
    "nodes": (_int, 20, "GLMM quadrature nodes"),
    "seed": (_int, None, "RNG seed (required for Monte Carlo algorithms)"),
    "output": (str, "trace.csv", "output CSV path"),
    "hit_ms": (_ints, (100, 1000, 10_000), "hit-prob: Monte Carlo sizes"),
    "hit_t0": (_int, 30, "hit-prob: updates per run"),
    "hit_epsilon": (float, 0.5, "hit-prob: ball radius"),
    "hit_runs": (_int, 50, "hit-prob: runs per size"),
    "hit_norm": (_choice("standardized", "euclidean"), "standardized", "hit-prob: distance"),
    "rate_window": (_int, 10, "rate: number of ratios"),
    "scaling_ms": (_ints, (100, 1000, 10_000, 100_000), "mcem-error-scaling: sizes"),
    "scaling_replicates": (_int, 20, "mcem-error-scaling: replicates per size"),
}


@dataclass
class RunConfig:
    values: dict
    lines: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None


def _line_ref(cfg, key):
    line = cfg.lines.get(key)
    return f"line {line}: " if line else ""


def parse_config(text, overrides=None):
    """Parse ``key = value`` lines into a validated :class:`RunConfig`."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in lines:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key!r}: {exc}") from None
        lines[key] = lineno
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)
    cfg = RunConfig({k: v[1] for k, v in KEYS.items()} | values, lines)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.model is None:
        raise ConfigError("missing required key 'model'")
    if cfg.model == "glmm" and cfg.algorithm not in MC_ALGORITHMS:
        raise ConfigError(
            f"{_line_ref(cfg, 'algorithm')}algorithm {cfg.algorithm!r} needs a closed-form "
            "E-step; glmm supports " + ", ".join(MC_ALGORITHMS)
        )
    if cfg.algorithm in MC_ALGORITHMS and cfg.seed is None:
        raise ConfigError(f"algorithm {cfg.algorithm!r} requires an explicit 'seed'")
    for key in ("theta0",):
        if cfg.values[key] is not None and len(cfg.values[key]) != (3 if cfg.model == "lmm" else 2):
            raise ConfigError(f"{_line_ref(cfg, key)}theta0 has the wrong number of components")
    checks = [
        ("schedule", lambda: _schedule(cfg)),
        ("consecutive", lambda: _stopping(cfg)),
        ("batches", lambda: _adaptive(cfg)),
        ("theta0", lambda: _theta0(cfg)),
    ]
    for key, build in checks:
        try:
            build()
        except (ConfigError, DomainError) as exc:
            line = next((cfg.lines[k] for k in _related(key) if k in cfg.lines), None)
            where = f"line {line}: " if line else ""
            raise ConfigError(f"{where}{exc}") from None
    try:
        StableConfig(_theta0(cfg), r0=_r0(cfg), c=cfg.c)
    except ConfigError as exc:
        raise ConfigError(f"{_line_ref(cfg, 'r0') or _line_ref(cfg, 'c')}{exc}") from None


def _related(key):
    return {
        "schedule": ("alpha", "m0", "schedule"),
        "consecutive": ("delta", "epsilon", "consecutive", "max_iter"),
        "batches": ("batches", "conf", "growth", "m_cap", "m0"),
        "theta0": ("theta0",),
    }[key]


def _schedule(cfg):
    alpha = cfg.alpha if cfg.schedule == "polynomial" else None
    return ScheduleConfig(cfg.schedule, cfg.m0, alpha)


def _stopping(cfg):
    return StoppingConfig(cfg.delta, cfg.epsilon, cfg.consecutive, cfg.max_iter)


def _adaptive(cfg):
    return AdaptiveConfig(cfg.batches, cfg.conf, cfg.growth, cfg.m0, cfg.m_cap)


def _theta0(cfg):
    if cfg.model == "lmm":
        return LmmTheta(*(cfg.theta0 or (55.0, 45.0, 260.0)))
    return GlmmTheta(*(cfg.theta0 or (2.0, 1.0)))


def _r0(cfg):
    r0 = cfg.r0
    return r0[0] if len(r0) == 1 else np.array(r0)


def _model(cfg):
    if cfg.model == "lmm":
        return LinearMixedModel()
    return LogitNormalModel(cfg.burnin, cfg.nodes)


def _dataset(cfg):
    source = cfg.dataset or ("builtin-bulls" if cfg.model == "lmm" else "synthetic")
    if cfg.model == "lmm":
        if source == "builtin-bulls":
            return bulls()
        if source == "synthetic":
            raise ConfigError("the lmm has no synthetic generator; use builtin-bulls or a path")
        return read_grouped_csv(source)
    if source == "synthetic":
        return simulate_panel(cfg.synth_beta, cfg.synth_sigma2, cfg.synth_q, cfg.synth_n,
                              np.random.default_rng(cfg.synth_seed))
    if source == "builtin-bulls":
        raise ConfigError("builtin-bulls is an lmm dataset")
    return read_panel_csv(source)


def run_from_config(cfg):
    """Execute the configured algorithm and return its trace."""
    model, data = _model(cfg), _dataset(cfg)
    return run_algorithm(
        model, data, cfg.algorithm, _theta0(cfg),
        schedule=_schedule(cfg), stop=_stopping(cfg),
        stable={"r0": _r0(cfg), "c": cfg.c}, adaptive=_adaptive(cfg),
        rng=np.random.default_rng(cfg.seed),
    )


def summary_line(trace):
    theta = trace.final
    last = trace.records[-1] if trace.records else None
    parts = [f"{n}={format_float(v)}" for n, v in theta.as_dict().items()]
    loglik = format_float(last.loglik) if last else "nan"
    reinits = last.p if last else 0
    return (
        " ".join(parts)
        + f" loglik={loglik} iterations={len(trace)} reinits={reinits}"
        + f" converged={str(trace.converged).lower()}"
    )


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path!r}: {exc}") from exc


def _load(args):
    overrides = {"seed": args.seed, "output": args.out}
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
    return parse_config(text, overrides)


def cmd_run(args, out=None):
    out = out or sys.stdout
    cfg = _load(args)
    try:
        trace = run_from_config(cfg)
    except (ConvergenceError, DomainError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    _write(cfg.output, trace_to_csv(trace))
    print(summary_line(trace), file=out)
    if cfg.algorithm in ("em", "em-gradient") and not trace.converged:
        print(f"error: no convergence within max_iter={cfg.max_iter}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _theta_star(cfg, model, data):
    if cfg.model == "lmm":
        tight = StoppingConfig(delta=cfg.delta, epsilon=1e-15, consecutive=3, max_iter=100_000)
        return run_em(model, _theta0(cfg), tight, data).final
    return glmm_direct_mle(data, cfg.nodes)


def experiment_rows(kind, cfg):
    """Header and rows of the results table for one experiment."""
    model, data = _model(cfg), _dataset(cfg)
    if kind == "hit-prob":
        if cfg.seed is None:
            raise ConfigError("hit-prob requires an explicit 'seed'")
        star = _theta_star(cfg, model, data)
        rows = []
        seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.hit_ms))
        for m, ss in zip(cfg.hit_ms, seeds):
            res = _hit(cfg, model, data, star, m, ss)
            rows.append([m, res.runs, res.T0, format_float(res.epsilon), res.hits,
                         format_float(res.fraction)])
        return ["m", "runs", "T0", "epsilon", "hits", "fraction"], rows
    if cfg.model != "lmm":
        raise ConfigError(f"experiment {kind!r} needs the closed-form EM update (model = lmm)")
    if kind == "rate":
        star = _theta_star(cfg, model, data)
        stop = StoppingConfig(delta=cfg.delta, epsilon=1e-13, consecutive=3, max_iter=100_000)
        trace = run_em(model, _theta0(cfg), stop, data)
        rep = rate_estimate(trace, star, cfg.rate_window)
        rho = spectral_radius(em_jacobian(model.em_step, star, data))
        return (["iterations", "median_rate", "cv", "spectral_radius"],
                [[len(trace), format_float(rep.median_rate), format_float(rep.cv),
                  format_float(rho)]])
    if kind == "mcem-error-scaling":
        if cfg.seed is None:
            raise ConfigError("mcem-error-scaling requires an explicit 'seed'")
        dev = mcem_error_scaling(model, _theta0(cfg), cfg.scaling_ms, cfg.scaling_replicates,
                                 np.random.SeedSequence(cfg.seed), data)
        header = ["m", "replicates"] + [f"dev_{n}" for n in model.names]
        rows = [[m, cfg.scaling_replicates] + [format_float(v) for v in row]
                for m, row in zip(cfg.scaling_ms, dev)]
        return header, rows
    raise ConfigError(f"unknown experiment {kind!r}; expected one of {EXPERIMENTS}")


def _hit(cfg, model, data, star, m, seed):
    return hit_probability(model, _theta0(cfg), star, m, cfg.hit_t0, cfg.hit_epsilon,
                           cfg.hit_runs, seed, data, norm=cfg.hit_norm)


def cmd_experiment(args, out=None):
    out = out or sys.stdout
    if args.kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.kind!r}; expected one of {EXPERIMENTS}")
    cfg = _load(args)
    try:
        header, rows = experiment_rows(args.kind, cfg)
    except (ConvergenceError, DomainError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    text = ",".join(header) + "\n" + "".join(",".join(str(v) for v in r) + "\n" for r in rows)
    _write(cfg.output, text)
    print(f"{args.kind}: wrote {len(rows)} rows to {cfg.output}", file=out)
    return EXIT_OK


def cmd_gen_data(args, out=None):
    out = out or sys.stdout
    if args.out is None:
        raise ConfigError("--out is required")
    if args.model == "lmm":
        write_grouped_csv(bulls(), args.out)
        print(f"wrote bulls data to {args.out}", file=out)
        return EXIT_OK
    if args.seed is None:
        raise ConfigError("--seed is required for synthetic data")
    if not args.sigma2 > 0 or args.q < 1 or args.n < 1:
        raise ConfigError("need q >= 1, n >= 1 and sigma2 > 0")
    data = simulate_panel(args.beta, args.sigma2, args.q, args.n, np.random.default_rng(args.seed))
    write_panel_csv(data, args.out)
    print(f"wrote {data.q} x {args.n} panel to {args.out}", file=out)
    return EXIT_OK


def cmd_plot_script(args, out=None):
    out = out or sys.stdout
    if args.trace is None:
        raise ConfigError("--trace is required")
    script = plot_script(args.trace)
    if args.out:
        _write(args.out, script)
        print(f"wrote plotting script to {args.out}", file=out)
    else:
        out.write(script)
    return EXIT_OK


def keys_help():
    width = max(len(k) for k in KEYS)
    lines = ["config keys (key = value, '#' starts a comment):"]
    for key, (_, default, text) in KEYS.items():
        if isinstance(default, tuple):
            shown = ",".join(str(v) for v in default)
        else:
            shown = "-" if default is None else str(default)
        lines.append(f"  {key:<{width}}  default {shown:<22} {text}")
    return "\n".join(lines)


def experiments_help():
    return "\n".join([
        "result tables:",
        "  hit-prob            m,runs,T0,epsilon,hits,fraction (one row per hit_ms entry)",
        "  rate                iterations,median_rate,cv,spectral_radius",
        "  mcem-error-scaling  m,replicates,dev_<component>... (one row per scaling_ms entry)",
    ])


def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="mcem", description="EM and Monte Carlo EM for two-stage hierarchical models.",
        epilog=keys_help(), formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--seed", type=int, metavar="N", help="override the 'seed' key")
        p.add_argument("--out", metavar="PATH", help="override the 'output' key")

    p_run = sub.add_parser("run", help="run one algorithm and write its trace CSV",
                           epilog=keys_help(), formatter_class=fmt)
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_exp = sub.add_parser("experiment", help="run a diagnostics experiment",
                           epilog=experiments_help() + "\n\n" + keys_help(), formatter_class=fmt)
    p_exp.add_argument("kind", help="|".join(EXPERIMENTS))
    common(p_exp)
    p_exp.set_defaults(func=cmd_experiment)

    p_gen = sub.add_parser("gen-data", help="write a dataset CSV")
    p_gen.add_argument("--model", choices=("lmm", "glmm"), default="glmm")
    p_gen.add_argument("--q", type=int, default=10)
    p_gen.add_argument("--n", type=int, default=15)
    p_gen.add_argument("--beta", type=float, default=6.132)
    p_gen.add_argument("--sigma2", type=float, default=1.766)
    p_gen.add_argument("--seed", type=int, metavar="N")
    p_gen.add_argument("--out", metavar="PATH")
    p_gen.set_defaults(func=cmd_gen_data)

    p_plot = sub.add_parser("plot-script", help="emit a matplotlib script for a trace CSV")
    p_plot.add_argument("--trace", metavar="PATH")
    p_plot.add_argument("--out", metavar="PATH")
    p_plot.set_defaults(func=cmd_plot_script)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
