"""Epsilon-trig regularization of bang-singular optimal control for a
point-absorber wave energy converter."""

from .bvp import BvpProblem, BvpSolution, SolverSettings, solve
from .cases import BoundarySpec, CaseSpec, builtin_cases, get_case
from .continuation import ContinuationSchedule, ContinuationStall, ContinuationTrace, run_continuation
from .excitation import FourierForce, case1_initial_conditions, non_periodic_force, periodic_force
from .model import ModelParams, optimal_control, rhs_augmented, switching_function
from .postprocess import classify_arcs, diagnostics, harvested_energy, sample_trajectory

__version__ = "0.1.0"

__all__ = [
    "BoundarySpec",
    "BvpProblem",
    "BvpSolution",
    "CaseSpec",
    "ContinuationSchedule",
    "ContinuationStall",
    "ContinuationTrace",
    "FourierForce",
    "ModelParams",
    "SolverSettings",
    "builtin_cases",
    "case1_initial_conditions",
    "classify_arcs",
    "diagnostics",
    "get_case",
    "harvested_energy",
    "non_periodic_force",
    "optimal_control",
    "periodic_force",
    "rhs_augmented",
    "run_continuation",
    "sample_trajectory",
    "solve",
    "switching_function",
]
