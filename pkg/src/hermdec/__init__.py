"""Discrete exterior calculus on simplicial meshes with Hermitian metrics."""

from .complex import Simplex, SimplicialComplex, build_complex
from .geometry import MetricField, compute_geometry, hodge_star
from .meshgen import Mesh, grid_mesh, random_mesh
from .problems import ProblemSpec, ResultTable, convergence_study, solve
from .solver import BoundaryMask, build_stack, dirac_kahler, eigs_smallest, laplace_beltrami

__all__ = [
    "BoundaryMask",
    "Mesh",
    "MetricField",
    "ProblemSpec",
    "ResultTable",
    "Simplex",
    "SimplicialComplex",
    "build_complex",
    "build_stack",
    "compute_geometry",
    "convergence_study",
    "dirac_kahler",
    "eigs_smallest",
    "grid_mesh",
    "hodge_star",
    "laplace_beltrami",
    "random_mesh",
    "solve",
]

__version__ = "0.1.0"
