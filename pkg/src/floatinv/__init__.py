"""Polynomial inductive invariants for floating-point loop programs.

Typical use::

    from floatinv import RunOptions, run
    report = run("loop.prog", RunOptions(degree=2))
    print(report.status, report.width, report.invariants)
"""

from .cfg import FpCfg, Transition, live_variables, loop_cfg
from .fpformat import F32, F64, FloatFormat, float_format
from .fpmodel import const_error_bound, symbolic_error_bound
from .frontend import FrontendError, SourceProgram, parse_file, parse_program
from .lp import LpOutcome, LpProblem, lp_solve, parse_lp
from .pipeline import RunOptions, RunReport, run, synthesize
from .poly import Poly
from .positivity import LinearCertSystem, assemble, match_coefficients
from .solve import InvariantSolution, sample_inductiveness, verify_solution
from .templates import Implication, SolveConfig, Template

__version__ = "0.1.0"

__all__ = [
    "F32", "F64", "FloatFormat", "FpCfg", "FrontendError", "Implication", "InvariantSolution",
    "LinearCertSystem", "LpOutcome", "LpProblem", "Poly", "RunOptions", "RunReport", "SolveConfig",
    "SourceProgram", "Template", "Transition", "assemble", "const_error_bound", "float_format",
    "live_variables", "loop_cfg", "lp_solve", "match_coefficients", "parse_file", "parse_lp",
    "parse_program", "run", "sample_inductiveness", "symbolic_error_bound", "synthesize", "verify_solution",
]
