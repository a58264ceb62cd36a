"""Iterative small-variation pre-distortion."""

from .coeffs import estimate_coeffs_sim, estimate_coeffs_volterra
from .engine import (ConfigError, PredistortConfig, RunTrace, exact_step_oracle, objective_window,
                     predistort_block)
from .lut import LutBudgetError, LutTable, build_lut, estimate_coeffs_lut, load_lut, save_lut
from .solver import LinearCoeffs, OpCounter, solve_delta_lin, step_op_counts, trust_region
from .zf import NotInvertibleError, zf_prefilter

__all__ = [
    "ConfigError",
    "LinearCoeffs",
    "LutBudgetError",
    "LutTable",
    "NotInvertibleError",
    "OpCounter",
    "PredistortConfig",
    "RunTrace",
    "build_lut",
    "estimate_coeffs_lut",
    "estimate_coeffs_sim",
    "estimate_coeffs_volterra",
    "exact_step_oracle",
    "load_lut",
    "objective_window",
    "predistort_block",
    "save_lut",
    "solve_delta_lin",
    "step_op_counts",
    "trust_region",
    "zf_prefilter",
]
