"""Small dense LMI/SDP layer: expressions, problems, solvers and bisection."""

from .expr import Affine, Var, as_affine, scalar_times, trace
from .bisection import solve_gevp_bisection
from .ipm import IpmOptions
from .problem import Compiled, LmiBlock, Problem
from .solve import (FEASIBLE, INFEASIBLE, MARGINAL, NUMERICAL_FAILURE, SolverResult,
                    default_backend, solve_feasibility, solve_min_linear, verify_assignment)

__all__ = [
    "Affine", "Var", "as_affine", "scalar_times", "trace", "IpmOptions", "Compiled",
    "LmiBlock", "Problem", "FEASIBLE", "INFEASIBLE", "MARGINAL", "NUMERICAL_FAILURE",
    "SolverResult", "default_backend", "solve_feasibility", "solve_min_linear",
    "verify_assignment", "solve_gevp_bisection",
]
