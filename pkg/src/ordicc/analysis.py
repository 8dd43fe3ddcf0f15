"""Dataset -> fitted model -> ICC with the interval type each model calls for.

Single-level cumulative-link fits get a transformed profile-likelihood
interval; nested fits and the naive model get delta-method intervals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .estimation.clmm import ClmmFit, FitOptions, fit_clmm
from .estimation.lmm import LmmFit, LmmOptions, fit_lmm
from .estimation.profile import profile_ci_sigma_b
from .exceptions import CIUnavailableError, OrdinalICCError
from .icc import IccEstimate, delta_ci, icc_from_clmm, icc_from_lmm, transform_profile_ci
from .likelihood import QuadratureRule, link_variance
from .model_core import OrdinalDataset

__all__ = ["Analysis", "clmm_icc", "naive_icc", "analyze"]


@dataclass(frozen=True)
class Analysis:
    """Outcome of one estimator on one dataset.

    ``icc`` is None only when the fit itself failed (``error`` says why).
    """

    estimator: str
    icc: Optional[IccEstimate]
    fit: Optional[Union[ClmmFit, LmmFit]] = None
    error: str = ""

    @property
    def converged(self) -> bool:
        return self.fit is not None and bool(self.fit.converged)


def clmm_icc(fit: ClmmFit, data: OrdinalDataset, level: float = 0.95,
             rule: Optional[QuadratureRule] = None, options: Optional[FitOptions] = None) -> IccEstimate:
    """Point ICC plus profile (single-level) or delta (nested) interval."""
    est = icc_from_clmm(fit)
    if fit.degenerate_icc:
        return est.with_ci(None, None, level, "random-effect variance unbounded; interval not estimable")
    m = link_variance(fit.link)
    if not fit.nested:
        try:
            ci_var = profile_ci_sigma_b(fit, data, level, rule=rule, options=options)
        except CIUnavailableError as exc:
            return est.with_ci(None, "profile_transform", level, str(exc))
        return est.with_ci(transform_profile_ci(ci_var, m), "profile_transform", level)
    if not fit.converged:
        return est.with_ci(None, "delta", level, "fit did not converge")
    values, vcov = fit.variance_components()
    try:
        ci = delta_ci(values, vcov, "nested", m=m, level=level)
    except CIUnavailableError as exc:
        return est.with_ci(None, "delta", level, str(exc))
    return est.with_ci(ci, "delta", level)


def naive_icc(fit: LmmFit, level: float = 0.95) -> IccEstimate:
    """Point ICC plus delta interval over all variance components."""
    est = icc_from_lmm(fit)
    structure = "nested" if fit.nested else "single"
    try:
        ci = delta_ci(fit.variance_estimates, fit.vcov_varcomp, structure, m=None, level=level)
    except CIUnavailableError as exc:
        return est.with_ci(None, "delta", level, str(exc))
    return est.with_ci(ci, "delta", level)


def analyze(data: OrdinalDataset, estimator: str, level: float = 0.95,
            rule: Optional[QuadratureRule] = None, options: Optional[FitOptions] = None,
            lmm_options: Optional[LmmOptions] = None) -> Analysis:
    """Fit ``estimator`` ("probit", "logistic" or "naive") and derive its ICC.

    Estimation failures are captured in the result instead of raised.
    """
    try:
        if estimator == "naive":
            fit = fit_lmm(data, lmm_options)
            return Analysis(estimator, naive_icc(fit, level), fit)
        fit = fit_clmm(data, estimator, rule, options)
        return Analysis(estimator, clmm_icc(fit, data, level, rule, options), fit)
    except (OrdinalICCError, ArithmeticError, ValueError, RuntimeError) as exc:
        return Analysis(estimator, None, None, f"{type(exc).__name__}: {exc}")
