"""Maximum-likelihood fitting of cumulative-link mixed models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from ..exceptions import InvalidInputError, LikelihoodEvaluationError
from ..likelihood import ClmmParams, ClmmProblem, QuadratureRule, default_rule
from ..model_core import OrdinalDataset, validate
from ._numdiff import hessian_from_gradient, inverse_if_pd

__all__ = ["FitOptions", "ClmmFit", "fit_clmm"]


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings shared by the CLMM fitter and the profile solver.

    ``variance_guard`` bounds the total random-effect variance on the working
    scale; fits above it are flagged ``degenerate_icc``, as are data whose
    innermost clusters each fall in a single category.
    """

    gtol: float = 1e-6
    ftol: float = 1e-10
    max_iter: int = 500
    hessian_step: float = 1e-4
    variance_guard: float = 1e4
    polish_steps: int = 8


@dataclass(frozen=True)
class ClmmFit:
    """Fitted cumulative-link mixed model.

    ``vcov`` is the inverse negative Hessian over the working parameters, or
    ``None`` when the Hessian is not negative definite.
    """

    params: ClmmParams
    loglik: float
    vcov: Optional[np.ndarray]
    converged: bool
    degenerate_icc: bool
    n_obs: int
    n_clusters: int
    n_ears: Optional[int] = None
    gradient: np.ndarray = field(default=None, repr=False)
    hessian: np.ndarray = field(default=None, repr=False)
    n_iter: int = 0
    message: str = ""
    gradient_method: str = "analytic (adaptive quadrature, exact)"
    quad_nodes: int = 15

    @property
    def link(self) -> str:
        return self.params.link

    @property
    def nested(self) -> bool:
        return self.params.nested

    @property
    def theta(self) -> np.ndarray:
        return self.params.to_vector()

    @property
    def sigma_b_sq(self) -> float:
        return self.params.sigma_b_sq

    @property
    def sigma_c_sq(self) -> Optional[float]:
        return self.params.sigma_c_sq

    @property
    def gradient_norm(self) -> float:
        return float(np.max(np.abs(self.gradient))) if self.gradient is not None else math.nan

    def variance_components(self):
        """Random-effect variances ``(sigma_b^2[, sigma_c^2])`` and their covariance.

        The covariance is mapped from the log-SD block of ``vcov`` by the
        Jacobian ``d sigma^2 / d log sigma = 2 sigma^2``; ``None`` if ``vcov``
        is unavailable.
        """
        k = 2 if self.nested else 1
        values = np.array([self.sigma_b_sq] + ([self.sigma_c_sq] if self.nested else []))
        if self.vcov is None:
            return values, None
        block = self.vcov[-k:, -k:]
        J = np.diag(2.0 * values)
        return values, J @ block @ J


def _negated(problem):
    def fun(theta):
        try:
            ll, g = problem.loglik_and_grad(theta)
        except LikelihoodEvaluationError:
            return np.inf, np.zeros_like(theta)
        return -ll, -g

    return fun


def _newton_polish(problem, theta, ll, grad, H, options):
    """A few safeguarded Newton steps using a fixed Hessian."""
    neg_H = -H
    try:
        np.linalg.cholesky(neg_H)
    except np.linalg.LinAlgError:
        return theta, ll, grad, 0
    steps = 0
    for _ in range(options.polish_steps):
        if np.max(np.abs(grad)) <= options.gtol:
            break
        delta = np.linalg.solve(neg_H, grad)
        t = 1.0
        for _ in range(30):
            cand = theta + t * delta
            try:
                ll_c, g_c = problem.loglik_and_grad(cand)
            except LikelihoodEvaluationError:
                ll_c = -np.inf
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            break
        theta, ll, grad = cand, ll_c, g_c
        steps += 1
    return theta, ll, grad, steps


def _innermost_constant(data) -> bool:
    # every innermost cluster in one category: the supremum is at infinite variance
    keys = data.cluster_keys()
    first = {}
    for key, k in zip(keys, data.categories):
        if first.setdefault(key, k) != k:
            return False
    return True


def fit_clmm(
    data: OrdinalDataset,
    link: str = "probit",
    rule: Optional[QuadratureRule] = None,
    options: Optional[FitOptions] = None,
    start=None,
) -> ClmmFit:
    """Fit a cumulative probit or logistic mixed model by maximum likelihood.

    Single-level or nested according to ``data.nesting``. BFGS on the
    unconstrained working parameters, finished with Newton steps against a
    finite-difference Hessian of the analytic gradient.

    Parameters
    ----------
    data : OrdinalDataset
    link : {"probit", "logistic"}
    rule : QuadratureRule, optional
        Defaults to adaptive Gauss-Hermite with ``DEFAULT_NODES[data.nesting]``
        nodes per dimension.
    options : FitOptions, optional
    start : array_like, optional
        Starting working-parameter vector.

    Returns
    -------
    ClmmFit
        ``converged`` is False if the gradient sup-norm did not reach
        ``options.gtol``; ``vcov`` is None if the Hessian is not negative
        definite.
    """
    problems = validate(data)
    if problems:
        raise InvalidInputError("; ".join(v.message for v in problems))
    options = options or FitOptions()
    rule = rule or default_rule(data.nesting)
    problem = ClmmProblem(data, link, rule)
    theta0 = problem.start_vector() if start is None else np.asarray(start, dtype=float)
    res = optimize.minimize(
        _negated(problem),
        theta0,
        jac=True,
        method="BFGS",
        options={"gtol": options.gtol, "maxiter": options.max_iter, "norm": np.inf},
    )
    theta = res.x
    ll, grad = problem.loglik_and_grad(theta)

    def grad_fn(t):
        return problem.loglik_and_grad(t)[1]

    H = hessian_from_gradient(grad_fn, theta, options.hessian_step)
    theta_p, ll_p, grad_p, moved = _newton_polish(problem, theta, ll, grad, H, options)
    if moved:
        theta, ll, grad = theta_p, ll_p, grad_p
        H = hessian_from_gradient(grad_fn, theta, options.hessian_step)
    vcov = inverse_if_pd(-H)
    params = problem.unpack(theta)
    total_var = params.sigma_b_sq + (params.sigma_c_sq or 0.0)
    converged = bool(np.max(np.abs(grad)) <= options.gtol)
    return ClmmFit(
        params=params,
        loglik=ll,
        vcov=vcov,
        converged=converged,
        degenerate_icc=bool(total_var > options.variance_guard or _innermost_constant(data)),
        n_obs=data.n_obs,
        n_clusters=data.n_clusters,
        n_ears=data.n_ears,
        gradient=grad,
        hessian=H,
        n_iter=int(res.nit) + moved,
        message=str(res.message),
        quad_nodes=rule.n_nodes,
    )
