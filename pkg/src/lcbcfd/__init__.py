"""High-order centered finite differences with local compatibility ghost closures."""
from .model import GridSpec, ExtendedGrid, PdeProblem, BoundarySpec, CoefficientField, manufactured_data
from .lcbc import build_ghost_closure, apply_ghost_closure, GhostClosure, SolvabilityError
from .steppers import Discretization, ImplicitOperator, run_scheme, stable_dt, solve_elliptic

__all__ = [
    "GridSpec", "ExtendedGrid", "PdeProblem", "BoundarySpec", "CoefficientField", "manufactured_data",
    "build_ghost_closure", "apply_ghost_closure", "GhostClosure", "SolvabilityError",
    "Discretization", "ImplicitOperator", "run_scheme", "stable_dt", "solve_elliptic",
]
