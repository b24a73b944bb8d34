"""Degrees of freedom and SURE tuning for estimators defined as projections onto polyhedra."""

try:
    from importlib.metadata import PackageNotFoundError, version as _version
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .geometry import (ActiveSet, ConstraintSystem, LiftedSystem, Linear, Quadratic,
                       active_set, maximal_independent_rows, numerical_rank, rank_info)
from .qp import (FitResult, InfeasibleError, SolverConfig, SolverError, UnboundedError,
                 certify, check_bounded, project, solve_lifted)
from .isotonic import (BoundedIsotonicSystem, GroupStructure, PartialOrder,
                       divergence_components, fit_bounded, fit_isotonic, pava, root_L, threshold)
from .problems import Dataset, ProblemSpec, fit
from .dof import (DivergenceReport, closed_form_ridge, divergence, finite_difference_divergence,
                  monte_carlo_df, replication_rng)
from .sure import SureCurve, ratio_experiment, sure_value, tune

__all__ = [
    "ActiveSet", "ConstraintSystem", "LiftedSystem", "Linear", "Quadratic", "active_set",
    "maximal_independent_rows", "numerical_rank", "rank_info",
    "FitResult", "InfeasibleError", "SolverConfig", "SolverError", "UnboundedError",
    "certify", "check_bounded", "project", "solve_lifted",
    "BoundedIsotonicSystem", "GroupStructure", "PartialOrder", "divergence_components",
    "fit_bounded", "fit_isotonic", "pava", "root_L", "threshold",
    "Dataset", "ProblemSpec", "fit",
    "DivergenceReport", "closed_form_ridge", "divergence", "finite_difference_divergence",
    "monte_carlo_df", "replication_rng",
    "SureCurve", "ratio_experiment", "sure_value", "tune",
]
