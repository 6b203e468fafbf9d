"""Structured LMI modeling: variables, block expressions, programs and solvers."""
from .backends import BACKENDS, ClarabelBackend, CvxoptBackend, get_backend
from .expr import STAR, Affine, BlockExpr, MatrixVar, as_affine, hstack, scalar_identity, vstack
from .program import (ConicProblem, EqualityConstraint, Feasibility, LmiProgram,
                      MinimizeScalar, MinimizeSumOfNorms, PsdConstraint, SolveOutcome, min_eig)

__all__ = [
    "STAR", "Affine", "BlockExpr", "MatrixVar", "as_affine", "hstack", "vstack",
    "scalar_identity",
    "LmiProgram", "ConicProblem", "SolveOutcome", "PsdConstraint", "EqualityConstraint",
    "Feasibility", "MinimizeScalar", "MinimizeSumOfNorms", "min_eig",
    "ClarabelBackend", "CvxoptBackend", "get_backend", "BACKENDS",
]
