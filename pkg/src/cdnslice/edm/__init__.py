"""Elasticity decision making: the flavor-assignment model, its solvers and the scaling loop."""

from .model import (AssignmentSolution, Coefficients, InstanceSnapshot, SolveParams, Status,
                    build_coefficients, check_feasibility, estimated_load)
from .bruteforce import solve_bruteforce
from .heuristic import solve_heuristic
from .branch_bound import solve, solve_exact
from .algorithm import (DecisionKind, EdmDecision, SolveBudget, Thresholds, TriggerKind,
                        classify_reading, edm_step, threshold_precheck)

__all__ = [
    "AssignmentSolution", "Coefficients", "InstanceSnapshot", "SolveParams", "Status",
    "build_coefficients", "check_feasibility", "estimated_load",
    "solve_bruteforce", "solve_heuristic", "solve_exact", "solve",
    "DecisionKind", "EdmDecision", "SolveBudget", "Thresholds", "TriggerKind",
    "classify_reading", "edm_step", "threshold_precheck",
]
