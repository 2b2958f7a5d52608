"""Iterative active-set solver for non-negative convex quadratic programs."""
from .model import (
    ActiveSetState,
    DualCertificate,
    NnqProblem,
    SolveResult,
    SolveTrace,
    Tolerances,
    gradient,
    kkt_satisfied,
    kkt_violations,
    objective,
    recover_reduced_cost,
)
from .driver import DriverConfig, default_tau, next_active_set, select_candidates, solve
from .subsolver import ReducedQp, SubsolverReport, extract_subproblem, solve_reduced

__all__ = [
    "ActiveSetState",
    "DriverConfig",
    "DualCertificate",
    "NnqProblem",
    "ReducedQp",
    "SolveResult",
    "SolveTrace",
    "SubsolverReport",
    "Tolerances",
    "default_tau",
    "extract_subproblem",
    "gradient",
    "kkt_satisfied",
    "kkt_violations",
    "next_active_set",
    "objective",
    "recover_reduced_cost",
    "select_candidates",
    "solve",
    "solve_reduced",
]
