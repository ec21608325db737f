"""Embedded dense LP solver and branch and bound for binary variables."""

from .milp import solve_milp
from .problem import LpProblem, LpSolution, Status, to_lp_format
from .simplex import BACKEND, solve_lp

__all__ = ["BACKEND", "LpProblem", "LpSolution", "Status", "solve_lp", "solve_milp", "to_lp_format"]
