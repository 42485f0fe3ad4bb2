"""Hybridizable discontinuous Galerkin solver for coupled Stokes flow and
Biot poroelasticity in total-pressure form (2D, simplicial meshes)."""

from .data import ProblemData
from .diagnostics import ConformityReport, check_conformity
from .drivers import SystemState, TimeGrid, initialize, march, solve_equilibrium, solve_steady
from .mesh import BIOT, STOKES, FacetTag, GeometrySpec, Mesh, generate, refine
from .parameters import InvalidParameterError, ParameterSet

__version__ = "0.1.0"

__all__ = [
    "BIOT", "STOKES", "ConformityReport", "FacetTag", "GeometrySpec", "InvalidParameterError",
    "Mesh", "ParameterSet", "ProblemData", "SystemState", "TimeGrid", "check_conformity",
    "generate", "initialize", "march", "refine", "solve_equilibrium", "solve_steady",
]
