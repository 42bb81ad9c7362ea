"""Gamma moment closure for the stochastic Ricker map.

Modules: gamma_kernels (Gamma Laplace-type moments), moment_map (closed
mean/variance recurrence), equilibrium (fixed point via the auxiliary root),
stability (finite-difference Jacobian + Schur test), montecarlo (reference
ensembles of the raw map), scan (parameter-plane maps) and cli.
"""
from .equilibrium import EquilibriumResult, Verdict, count_roots, solve_equilibrium, threshold_R
from .errors import DomainError, NumericFailure, StabilityUndefined, UndefinedCV, UnsupportedOrder
from .gamma_kernels import GammaShape, gamma_from_moments, gamma_pdf, laplace_moment
from .moment_map import MomentState, Params, iterate, step
from .montecarlo import EnsembleConfig, EnsembleStats, compare_distribution, run_ensemble
from .scan import boundary_error, existence_scan, stability_scan
from .stability import CellClass, classify, numerical_jacobian, schur_test

__version__ = "0.1.0"

__all__ = [
    "CellClass", "DomainError", "EnsembleConfig", "EnsembleStats", "EquilibriumResult",
    "GammaShape", "MomentState", "NumericFailure", "Params", "StabilityUndefined",
    "UndefinedCV", "UnsupportedOrder", "Verdict", "boundary_error", "classify",
    "compare_distribution", "count_roots", "existence_scan", "gamma_from_moments",
    "gamma_pdf", "iterate", "laplace_moment", "numerical_jacobian", "run_ensemble",
    "schur_test", "solve_equilibrium", "stability_scan", "step", "threshold_R",
]
