"""Slow-fast coupled SDE/SPDE simulation and averaging verification.

A sine-spectral solver for coupled slow-fast systems on (0,1): a slow
reaction-diffusion field, an optional fast field, and a slow/fast particle
pair, plus the machinery to build their averaged (effective) dynamics and
measure how fast the full system converges to them as the scale separation
grows.
"""

__version__ = "0.1.0"

from .averaging import (
    build_auxiliary_pair,
    delta_schedule,
    gap_estimators,
    integrate_effective_system,
    make_plan,
    PartitionPlan,
)
from .basis import (
    EigenBasis,
    Field,
    build_basis,
    l2_inner,
    nemytskii_apply,
    project_expression,
    semigroup_apply,
)
from .coefficients import CoefficientSet, coefficients_from_strings
from .errors import BlowUpError, ConfigError
from .exprlang import EvalError, ParseError, eval_expr, parse_expr, to_string
from .harness import (
    ExperimentConfig,
    MomentTable,
    emit_outputs,
    load_config,
    run_check_suite,
    run_model1_convergence,
    run_model2_convergence,
)
from .hypotheses import HypothesisReport, SampleBox, check_hypotheses
from .noise import Channel, NoiseStream
from .sde import (
    AveragedDrift,
    MicroState,
    estimate_bbar,
    integrate_effective_xi,
    simulate_frozen_fast_sde,
    step_coupled_sde,
    tabulate_bbar,
)
from .spde import (
    AveragedField,
    EnergyLedger,
    MacroState,
    energy_residual,
    estimate_fbar,
    holder_modulus,
    measure_contraction,
    moment_sup,
    simulate_frozen_fast_spde,
    step_fast_spde,
    step_slow_spde,
)
from .systems import simulate_model1, simulate_model2

__all__ = [
    "AveragedDrift",
    "AveragedField",
    "BlowUpError",
    "Channel",
    "CoefficientSet",
    "ConfigError",
    "EigenBasis",
    "EnergyLedger",
    "EvalError",
    "ExperimentConfig",
    "Field",
    "HypothesisReport",
    "MacroState",
    "MicroState",
    "MomentTable",
    "NoiseStream",
    "ParseError",
    "PartitionPlan",
    "SampleBox",
    "build_auxiliary_pair",
    "build_basis",
    "check_hypotheses",
    "coefficients_from_strings",
    "delta_schedule",
    "emit_outputs",
    "energy_residual",
    "estimate_bbar",
    "estimate_fbar",
    "eval_expr",
    "gap_estimators",
    "holder_modulus",
    "integrate_effective_system",
    "integrate_effective_xi",
    "l2_inner",
    "load_config",
    "make_plan",
    "measure_contraction",
    "moment_sup",
    "nemytskii_apply",
    "parse_expr",
    "project_expression",
    "run_check_suite",
    "run_model1_convergence",
    "run_model2_convergence",
    "semigroup_apply",
    "simulate_frozen_fast_sde",
    "simulate_frozen_fast_spde",
    "simulate_model1",
    "simulate_model2",
    "step_coupled_sde",
    "step_fast_spde",
    "step_slow_spde",
    "tabulate_bbar",
    "to_string",
]
