"""Penalization simulator for obstacle problems of quasilinear SPDEs with Neumann boundary conditions."""
from .coefficients import CoefficientSet, ObstacleSpec, ProblemSpec, make_field
from .grid import EllipticCoefficients, assemble_operator, build_grid
from .kernels import BACKEND
from .linear_solver import mild_oracle, solve
from .noise import antithetic, refinement_family, sample_path
from .obstacle_solver import reflected_potential, skorokhod_gap, solve_obstacle

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CoefficientSet", "EllipticCoefficients", "ObstacleSpec", "ProblemSpec", "antithetic",
    "assemble_operator", "build_grid", "make_field", "mild_oracle", "reflected_potential",
    "refinement_family", "sample_path", "skorokhod_gap", "solve", "solve_obstacle",
]
