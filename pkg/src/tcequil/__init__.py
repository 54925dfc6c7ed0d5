"""Equilibrium asset pricing with quadratic transaction costs: linear benchmark."""

from .params import DerivedScalars, ModelParams, ParameterError, derive, validate
from .riccati import (
    ExistenceReport,
    RiccatiSolution,
    check_existence,
    eval_coeff,
    residual_norm,
    solve_direct,
    solve_picard,
)

__all__ = [
    "DerivedScalars",
    "ExistenceReport",
    "ModelParams",
    "ParameterError",
    "RiccatiSolution",
    "check_existence",
    "derive",
    "eval_coeff",
    "residual_norm",
    "solve_direct",
    "solve_picard",
    "validate",
]
