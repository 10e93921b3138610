"""Decentralized momentum SGD simulator: topologies, problems, optimizers and analysis."""

from .analysis import (
    BiasEstimate,
    MetricRecord,
    ScalingAxis,
    ScalingFit,
    Trajectory,
    estimate_limiting_bias,
    fit_bias_scaling,
    fixed_point_residual,
    metrics_snapshot,
    theorem_constant_check,
)
from .config import ExperimentConfig, SweepSpec, apply_override, parse_config, serialize_config, validate_config
from .errors import DecentLaMError
from .optimizers import STEPPERS, GradientSpec, OptimizerState, init_state, make_schedule
from .problems import Problem, generate_regression, stochastic_gradient
from .runner import emit_csv, run_experiment, run_sweep
from .topology import Graph, WeightMatrix, build_topology, metropolis_weights, spectral_rho, validate_weight_matrix

__version__ = "0.1.0"

__all__ = [
    "BiasEstimate",
    "MetricRecord",
    "ScalingAxis",
    "ScalingFit",
    "Trajectory",
    "estimate_limiting_bias",
    "fit_bias_scaling",
    "fixed_point_residual",
    "metrics_snapshot",
    "theorem_constant_check",
    "ExperimentConfig",
    "SweepSpec",
    "apply_override",
    "parse_config",
    "serialize_config",
    "validate_config",
    "DecentLaMError",
    "STEPPERS",
    "GradientSpec",
    "OptimizerState",
    "init_state",
    "make_schedule",
    "Problem",
    "generate_regression",
    "stochastic_gradient",
    "emit_csv",
    "run_experiment",
    "run_sweep",
    "Graph",
    "WeightMatrix",
    "build_topology",
    "metropolis_weights",
    "spectral_rho",
    "validate_weight_matrix",
]
