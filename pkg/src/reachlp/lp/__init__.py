from .program import LinearProgram, LpFormatError, LpSolution, Status, dump_lp, parse_lp
from .simplex import FEAS_TOL, OPT_TOL, PIVOT_TOL, solve_lp

__all__ = [
    "LinearProgram", "LpSolution", "LpFormatError", "Status",
    "dump_lp", "parse_lp", "solve_lp", "FEAS_TOL", "OPT_TOL", "PIVOT_TOL",
]
