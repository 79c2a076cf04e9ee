"""Monotone (smoothed) Krotov and GRAPE pulse optimization for small NMR spin systems.

Controls are held in rad/s, Hz appears only in file formats and reports.
"""
from .exceptions import ConfigError, PulseTableParseError, UnsupportedVariantError
from .spinops import SpinSystem, angular_momentum_operators, embed
from .propagation import (
    ControlSequence,
    HermitianTransfer,
    NonHermitianTransfer,
    PenaltySpec,
    PropagatorSynthesis,
    backward_propagate,
    final_cost,
    forward_propagate,
    normalized_efficiency,
    running_cost,
    terminal_adjoint,
    total_functional,
)
from .krotov import Condition, InnerSolverConfig, KrotovConfig, delta_functional_decomposition, krotov_optimize
from .grape import GrapeConfig, grape_gradient, grape_optimize
from .smoothing import FrequencyTruncation, TruncationSpec, frequency_truncate, regularized_accept
from .experiments import ExperimentSpec, build_experiment
from .estimators import GrapePulseOptimizer, KrotovPulseOptimizer

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "PulseTableParseError",
    "UnsupportedVariantError",
    "SpinSystem",
    "angular_momentum_operators",
    "embed",
    "ControlSequence",
    "HermitianTransfer",
    "NonHermitianTransfer",
    "PenaltySpec",
    "PropagatorSynthesis",
    "backward_propagate",
    "final_cost",
    "forward_propagate",
    "normalized_efficiency",
    "running_cost",
    "terminal_adjoint",
    "total_functional",
    "Condition",
    "InnerSolverConfig",
    "KrotovConfig",
    "delta_functional_decomposition",
    "krotov_optimize",
    "GrapeConfig",
    "grape_gradient",
    "grape_optimize",
    "FrequencyTruncation",
    "TruncationSpec",
    "frequency_truncate",
    "regularized_accept",
    "ExperimentSpec",
    "build_experiment",
    "GrapePulseOptimizer",
    "KrotovPulseOptimizer",
]
