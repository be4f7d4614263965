"""Selective inference for l1-penalized likelihood models."""

from .errors import (
    ConvergenceError,
    DegenerateError,
    DegenerateWarning,
    EmptySelectionError,
    InputError,
    NumericalError,
    PostSelError,
)
from .families import Dataset, FamilySpec, LocalQuadratic, local_quadratic, log_likelihood, observed_information
from .glasso import PrecisionFit, fit_glasso, glasso_hessian, glasso_infer, glasso_one_step
from .lasso import LassoFit, PenaltySpec, SolverControls, cross_validate_lambda, fit_lasso, kkt_check, lambda_max
from .polyhedral import PolyhedralConstraint, TruncatedGaussian, tg_cdf, tg_interval, tg_pvalue, truncation_bounds
from .selective import SelectiveReport, active_constraints, infer, one_step, pairs_bootstrap_cov, sandwich_cov
from .sim import SimDesign, SimReport, coverage_table, generate, run_design

__all__ = [name for name in dir() if not name.startswith("_")]
