"""EM and Monte Carlo EM for two-stage hierarchical models."""

__version__ = "0.1.0"

from .diagnostics import (
    em_jacobian,
    hit_probability,
    loglog_slope,
    mcem_error_scaling,
    rate_estimate,
    spectral_radius,
    trace_read,
    trace_write,
)
from .engine import (
    AdaptiveConfig,
    ScheduleConfig,
    StableConfig,
    ascent_check,
    booth_hobert_adapt,
    run_algorithm,
    run_mcem,
    run_mcem_adaptive,
    stable_mcem_run,
)
from .estimators import LinearMixedModelEM, LogitNormalGLMM
from .exceptions import CapabilityError, ConfigError, ConvergenceError, DomainError, MCEMError
from .glmm import GlmmTheta, LogitNormalModel, PanelDataset, simulate_panel
from .kernel import HierarchicalModel, IterationRecord, StoppingConfig, Theta, Trace, run_em
from .lmm import GroupedDataset, LinearMixedModel, LmmTheta, bulls

__all__ = [
    "AdaptiveConfig", "CapabilityError", "ConfigError", "ConvergenceError", "DomainError",
    "GlmmTheta", "GroupedDataset", "HierarchicalModel", "IterationRecord",
    "LinearMixedModel", "LinearMixedModelEM", "LmmTheta", "LogitNormalGLMM",
    "LogitNormalModel", "MCEMError", "PanelDataset", "ScheduleConfig", "StableConfig",
    "StoppingConfig", "Theta", "Trace", "ascent_check", "booth_hobert_adapt", "bulls",
    "em_jacobian", "hit_probability", "loglog_slope", "mcem_error_scaling", "rate_estimate",
    "run_algorithm", "run_em", "run_mcem", "run_mcem_adaptive", "simulate_panel",
    "spectral_radius", "stable_mcem_run", "trace_read", "trace_write",
]
