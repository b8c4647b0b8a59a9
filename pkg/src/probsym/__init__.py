"""Symbolic execution of probabilistic programs with observe statements."""
from __future__ import annotations

__version__ = "0.1.0"

from .syntax import parse, parse_bool, desugar, Program
from .interp import Valuation, DomainError
from .symexec import explore, bigstep_enumerate, step, Configuration, PathOutcome, BudgetError
from .concrete import run_concrete, simulate, Point, Uniform01, StdNormal
from .measure import (theorem2_sum, posterior, exact_separable_mass, mc_mass,
                      enumerate_discrete_oracle, MassEstimate)
from .solver import Solver, emit_smt

__all__ = [
    "parse", "parse_bool", "desugar", "Program", "Valuation", "DomainError",
    "explore", "bigstep_enumerate", "step", "Configuration", "PathOutcome", "BudgetError",
    "run_concrete", "simulate", "Point", "Uniform01", "StdNormal",
    "theorem2_sum", "posterior", "exact_separable_mass", "mc_mass",
    "enumerate_discrete_oracle", "MassEstimate", "Solver", "emit_smt",
]
