"""Adjusted intracluster correlation for clustered ordinal outcomes.

Cumulative probit and logistic mixed models fitted by adaptive Gauss-Hermite
quadrature, a naive linear mixed model for comparison, profile-likelihood and
delta-method intervals, and a seeded Monte Carlo harness.
"""
from .analysis import Analysis, analyze
from .estimation import ClmmFit, FitOptions, LmmFit, LmmOptions, fit_clmm, fit_lmm, profile_ci_sigma_b
from .estimators import CumulativeLinkMixedModel, NaiveLinearMixedModel
from .exceptions import (
    CIUnavailableError,
    ConvergenceError,
    DegenerateOutcomeError,
    InvalidInputError,
    LikelihoodEvaluationError,
    OrdinalICCError,
    UndefinedICCError,
)
from .icc import IccEstimate, delta_ci, icc_from_clmm, icc_from_lmm, transform_profile_ci
from .likelihood import ClmmParams, QuadratureRule, loglik
from .model_core import CutpointLattice, LatentParams, OrdinalDataset, ThresholdSet, canonicalize, discretize, validate
from .simulation import SimConfig, generate_dataset, run_replicate, run_simulation, summarize

__version__ = "0.1.0"
REPORT_SCHEMA = "ordicc.report/1"

__all__ = [
    "Analysis",
    "analyze",
    "ClmmFit",
    "FitOptions",
    "LmmFit",
    "LmmOptions",
    "fit_clmm",
    "fit_lmm",
    "profile_ci_sigma_b",
    "CumulativeLinkMixedModel",
    "NaiveLinearMixedModel",
    "CIUnavailableError",
    "ConvergenceError",
    "DegenerateOutcomeError",
    "InvalidInputError",
    "LikelihoodEvaluationError",
    "OrdinalICCError",
    "UndefinedICCError",
    "IccEstimate",
    "delta_ci",
    "icc_from_clmm",
    "icc_from_lmm",
    "transform_profile_ci",
    "ClmmParams",
    "QuadratureRule",
    "loglik",
    "CutpointLattice",
    "LatentParams",
    "OrdinalDataset",
    "ThresholdSet",
    "canonicalize",
    "discretize",
    "validate",
    "SimConfig",
    "generate_dataset",
    "run_replicate",
    "run_simulation",
    "summarize",
]
