"""equisub: solve and estimate competitive systems with substitutes.

Core objects: balanced supply systems Q(p) = q (system, solver,
normalization), structure diagnostics, two instantiations (bipartite
matching markets and discrete-choice demand), and estimation layers on
top of both.
"""

from . import demand, diagnostics, errors, estimation, matching, normalization, solver, system
from .normalization import Normalization, coordinate, mean, renormalize
from .solver import SolveReport, SolverOptions, solve_normalized, solve_pinned
from .system import Bounds, SubsolutionHints, SupplySystem, eval_supply

__version__ = "0.1.0"

__all__ = [
    "Bounds",
    "Normalization",
    "SolveReport",
    "SolverOptions",
    "SubsolutionHints",
    "SupplySystem",
    "coordinate",
    "demand",
    "diagnostics",
    "errors",
    "estimation",
    "eval_supply",
    "matching",
    "mean",
    "normalization",
    "renormalize",
    "solve_normalized",
    "solve_pinned",
    "solver",
    "system",
]
