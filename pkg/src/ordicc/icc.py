"""Adjusted ICC point estimates and confidence intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .estimation.clmm import ClmmFit
from .estimation.lmm import LmmFit
from .exceptions import CIUnavailableError, InvalidInputError, UndefinedICCError
from .likelihood import link_variance

__all__ = [
    "IccEstimate",
    "icc_from_clmm",
    "icc_from_lmm",
    "transform_profile_ci",
    "delta_ci",
]

METHODS = ("clmm_probit", "clmm_logistic", "naive_lmm")
CI_METHODS = ("profile_transform", "delta")


@dataclass(frozen=True)
class IccEstimate:
    """Adjusted ICC with an optional confidence interval.

    ``ci`` is ``None`` when no interval could be formed; ``note`` then says why.
    """

    value: float
    method: str
    ci: Optional[tuple] = None
    ci_method: Optional[str] = None
    level: float = 0.95
    degenerate: bool = False
    note: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}")
        if self.ci_method is not None and self.ci_method not in CI_METHODS:
            raise InvalidInputError(f"ci_method must be one of {CI_METHODS}")
        if not 0.0 <= self.value <= 1.0:
            raise InvalidInputError(f"ICC {self.value} outside [0, 1]")
        if self.ci is not None:
            lo, hi = self.ci
            if not (0.0 <= lo <= hi <= 1.0):
                raise InvalidInputError(f"interval {self.ci} not inside [0, 1]")

    def covers(self, truth: float) -> Optional[bool]:
        if self.ci is None:
            return None
        return self.ci[0] <= truth <= self.ci[1]

    def with_ci(self, ci, ci_method, level, note="") -> "IccEstimate":
        if ci is not None:
            lo, hi = ci
            # guard against rounding pushing the point estimate outside its own interval
            ci = (min(lo, self.value), max(hi, self.value))
        return IccEstimate(self.value, self.method, ci, ci_method, level, self.degenerate, note)


def _ratio(between: float, m: float) -> float:
    if math.isinf(between):
        return 1.0
    return between / (between + m)


def icc_from_clmm(fit: ClmmFit) -> IccEstimate:
    """Latent-scale adjusted ICC ``(s_b^2 [+ s_c^2]) / (s_b^2 [+ s_c^2] + m)``.

    ``m`` is 1 for probit and pi^2/3 for logistic. Degenerate fits report 1.
    """
    method = f"clmm_{fit.link}"
    if fit.degenerate_icc:
        return IccEstimate(1.0, method, degenerate=True, note="random-effect variance unbounded")
    between = fit.sigma_b_sq + (fit.sigma_c_sq or 0.0)
    return IccEstimate(_ratio(between, link_variance(fit.link)), method)


def icc_from_lmm(fit: LmmFit) -> IccEstimate:
    """Adjusted ICC from the naive linear mixed model's variance components."""
    between = fit.sigma_b_sq_hat + (fit.sigma_c_sq_hat or 0.0)
    total = between + fit.sigma_eps_sq_hat
    if total <= 0.0:
        raise UndefinedICCError("all variance components are zero")
    return IccEstimate(between / total, "naive_lmm")


def transform_profile_ci(ci_sigma_b_sq: Sequence[float], m: float) -> tuple:
    """Map an interval for ``sigma_b^2`` through ``s -> s / (s + m)``."""
    lo, hi = ci_sigma_b_sq
    if not (0.0 <= lo <= hi):
        raise InvalidInputError("need 0 <= lo <= hi")
    return _ratio(lo, m), _ratio(hi, m)


def delta_ci(variance_estimates, vcov, structure: str = "single", m: Optional[float] = None,
             level: float = 0.95) -> tuple:
    """Wald interval for the ICC by the delta method, truncated to [0, 1].

    Parameters
    ----------
    variance_estimates : array_like
        With ``m`` given (cumulative-link models): ``(s_b^2[, s_c^2])``.
        With ``m=None`` (naive model): ``(s_b^2[, s_c^2], s_eps^2)``, the
        last component playing the role of ``m``.
    vcov : array_like or None
        Covariance of ``variance_estimates``.
    structure : {"single", "nested"}
    m : float, optional
    level : float

    Raises
    ------
    CIUnavailableError
        ``vcov`` is missing, non-conformable or not positive semi-definite.
    """
    if vcov is None:
        raise CIUnavailableError("covariance matrix unavailable")
    v = np.asarray(variance_estimates, dtype=float)
    V = np.asarray(vcov, dtype=float)
    k = 2 if structure == "nested" else 1
    expected = k if m is not None else k + 1
    if v.shape != (expected,) or V.shape != (expected, expected):
        raise CIUnavailableError(f"expected {expected} variance components and a conformable covariance")
    if not np.all(np.isfinite(V)) or np.any(np.diag(V) < 0):
        raise CIUnavailableError("covariance matrix is not positive semi-definite")
    between = float(np.sum(v[:k]))
    denom_extra = m if m is not None else float(v[k])
    total = between + denom_extra
    if total <= 0:
        raise UndefinedICCError("all variance components are zero")
    g = between / total
    grad = np.full(expected, denom_extra / total ** 2)
    if m is None:
        grad[k] = -between / total ** 2
    var = float(grad @ V @ grad)
    if var < 0:
        if var < -1e-12 * abs(g):
            raise CIUnavailableError("negative delta-method variance")
        var = 0.0
    half = stats.norm.ppf(0.5 + level / 2.0) * math.sqrt(var)
    return float(max(0.0, g - half)), float(min(1.0, g + half))
