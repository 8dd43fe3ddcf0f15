"""Profile likelihood for the random-intercept variance of a single-level CLMM."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import optimize, stats

from ..exceptions import CIUnavailableError, ConvergenceError, InvalidInputError
from ..likelihood import ClmmProblem, QuadratureRule
from ..model_core import OrdinalDataset
from ._numdiff import hessian_from_gradient, inverse_if_pd
from .clmm import ClmmFit, FitOptions, _newton_polish

__all__ = ["SigmaBProfile", "profile_loglik_sigma_b", "profile_ci_sigma_b"]


class _FixedSigma:
    """Likelihood as a function of the nuisance parameters alone."""

    def __init__(self, problem, log_sb):
        self.problem = problem
        self.log_sb = log_sb

    def loglik_and_grad(self, nuis):
        ll, g = self.problem.loglik_and_grad(np.append(nuis, self.log_sb))
        return ll, g[:-1]


class SigmaBProfile:
    """Log-likelihood maximised over thresholds and fixed effects at fixed ``sigma_b^2``.

    Solutions are cached and reused as warm starts, so evaluating a sequence
    of nearby values is cheap. Results depend only on the evaluation order.

    Parameters
    ----------
    data : OrdinalDataset
        Single-level data.
    link : {"probit", "logistic"}
    rule : QuadratureRule, optional
    fit : ClmmFit, optional
        Full fit on the same data; seeds the warm-start cache and the
        initial inverse Hessian of the inner solver.
    options : FitOptions, optional
    """

    def __init__(self, data: OrdinalDataset, link: str = "probit", rule: Optional[QuadratureRule] = None,
                 fit: Optional[ClmmFit] = None, options: Optional[FitOptions] = None):
        if data.nesting != "single":
            raise InvalidInputError("profile likelihood is only available for single-level data")
        self.options = options or FitOptions()
        self.problem = ClmmProblem(data, link, rule)
        self.n_nuisance = self.problem.n_params - 1
        self._solutions = {}  # log sigma_b -> (loglik, nuisance)
        self._hess_inv0 = None
        if fit is not None:
            theta = fit.theta
            self._solutions[float(theta[-1])] = (fit.loglik, theta[:-1].copy())
            if fit.hessian is not None:
                self._hess_inv0 = inverse_if_pd(-fit.hessian[:-1, :-1])
        else:
            start = self.problem.start_vector()
            self._default_start = start[:-1]

    def _nearest_start(self, log_sb):
        if not self._solutions:
            return self._default_start
        keys = sorted(self._solutions)
        if math.isinf(log_sb):
            pick = keys[0]
        else:
            pick = min(keys, key=lambda k: abs(k - log_sb))
        return self._solutions[pick][1]

    def solve(self, sigma_b_sq: float):
        """Return ``(profile loglik, nuisance working parameters)``."""
        if not sigma_b_sq >= 0:
            raise InvalidInputError("sigma_b_sq must be >= 0")
        log_sb = 0.5 * math.log(sigma_b_sq) if sigma_b_sq > 0 else -math.inf
        if log_sb in self._solutions:
            return self._solutions[log_sb]
        problem = self.problem

        def fun(nuis):
            ll, g = problem.loglik_and_grad(np.append(nuis, log_sb))
            return -ll, -g[:-1]

        opts = {"gtol": self.options.gtol, "maxiter": self.options.max_iter, "norm": np.inf}
        if self._hess_inv0 is not None:
            opts["hess_inv0"] = self._hess_inv0
        res = optimize.minimize(fun, self._nearest_start(log_sb), jac=True, method="BFGS", options=opts)
        x, ll = res.x, -float(res.fun)
        gnorm = float(np.max(np.abs(res.jac)))
        if not res.success and gnorm > self.options.gtol:
            x, ll, gnorm = self._polish(x, log_sb)
        # BFGS may stop on precision loss just short of gtol; accept a small slack
        if gnorm > 100 * self.options.gtol:
            raise ConvergenceError(
                f"profile optimisation failed at sigma_b^2 = {sigma_b_sq:.6g}: {res.message} (|grad| = {gnorm:.2e})"
            )
        out = (ll, x.copy())
        self._solutions[log_sb] = out
        return out

    def _polish(self, nuis, log_sb):
        fixed = _FixedSigma(self.problem, log_sb)
        ll, grad = fixed.loglik_and_grad(nuis)
        H = hessian_from_gradient(lambda t: fixed.loglik_and_grad(t)[1], nuis, self.options.hessian_step)
        nuis, ll, grad, _ = _newton_polish(fixed, nuis, ll, grad, H, self.options)
        return nuis, ll, float(np.max(np.abs(grad)))

    def __call__(self, sigma_b_sq: float) -> float:
        return self.solve(sigma_b_sq)[0]


def profile_loglik_sigma_b(
    data: OrdinalDataset,
    link: str = "probit",
    rule: Optional[QuadratureRule] = None,
    sigma_b_sq_fixed: float = 1.0,
    options: Optional[FitOptions] = None,
) -> float:
    """Profiled log-likelihood at one fixed random-intercept variance."""
    return SigmaBProfile(data, link, rule, options=options)(sigma_b_sq_fixed)


def likelihood_root(profile: SigmaBProfile, fit: ClmmFit, sigma_b: float) -> float:
    """Signed likelihood root ``sign(s - s_hat) sqrt(2 (l_hat - l_prof(s)))`` in the SD scale."""
    drop = max(fit.loglik - profile(sigma_b * sigma_b), 0.0)
    return math.copysign(math.sqrt(2.0 * drop), sigma_b - fit.params.sigma_b)


def profile_ci_sigma_b(
    fit: ClmmFit,
    data: OrdinalDataset,
    level: float = 0.95,
    rule: Optional[QuadratureRule] = None,
    options: Optional[FitOptions] = None,
    profile: Optional[SigmaBProfile] = None,
):
    """Likelihood-root confidence interval for ``sigma_b^2``.

    The endpoints solve ``|r| = z_{(1+level)/2}``. Each side is bracketed by
    geometric steps from the estimate (sized by the Wald standard error of
    ``log sigma_b``) and refined with Brent's method; the lower limit is 0 if
    ``r(0)`` does not reach the critical value.

    Returns
    -------
    (float, float)
        Interval for ``sigma_b^2``.

    Raises
    ------
    CIUnavailableError
        Degenerate or unconverged fit, or the upper limit lies beyond the
        variance guard.
    """
    if fit.nested:
        raise InvalidInputError("profile intervals are only available for single-level fits")
    if not 0 < level < 1:
        raise InvalidInputError("level must be in (0, 1)")
    options = options or FitOptions()
    if fit.degenerate_icc:
        raise CIUnavailableError("random-intercept variance at the degeneracy guard")
    if not fit.converged:
        raise CIUnavailableError("fit did not converge")
    if profile is None:
        profile = SigmaBProfile(data, fit.link, rule or QuadratureRule(fit.quad_nodes), fit=fit, options=options)
    crit = stats.norm.ppf(0.5 + level / 2.0)
    sb_hat = fit.params.sigma_b
    se_log = math.sqrt(fit.vcov[-1, -1]) if fit.vcov is not None and fit.vcov[-1, -1] > 0 else 0.5
    step = min(max(crit * se_log, 0.05), 2.0)
    guard_sd = math.sqrt(options.variance_guard)

    def root(s):
        return likelihood_root(profile, fit, s)

    try:
        # upper limit
        lo_s, hi_s = sb_hat, sb_hat * math.exp(step)
        while True:
            if hi_s > guard_sd:
                raise CIUnavailableError("upper profile limit beyond the variance guard")
            if root(hi_s) >= crit:
                break
            lo_s, hi_s = hi_s, hi_s * math.exp(step)
            step *= 1.5
        upper = optimize.brentq(lambda s: root(s) - crit, lo_s, hi_s, xtol=1e-12, rtol=1e-12)

        # lower limit
        if root(0.0) >= -crit:
            lower = 0.0
        else:
            trial = sb_hat * math.exp(-min(max(crit * se_log, 0.05), 2.0))
            if root(trial) <= -crit:
                bracket = (trial, sb_hat)
            else:
                bracket = (0.0, trial)
            lower = optimize.brentq(lambda s: root(s) + crit, *bracket, xtol=1e-12, rtol=1e-12)
    except ConvergenceError as exc:
        raise CIUnavailableError(str(exc)) from exc
    return lower * lower, upper * upper
