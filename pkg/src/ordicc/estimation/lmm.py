"""Linear mixed model fitted to ordinal category codes by REML or ML.

The marginal covariance of a subject is
``sigma_e^2 * (I + lam_c * sum_e J_e + lam_b * J)``; its inverse and
determinant are evaluated in closed form per subject, so each likelihood
evaluation is linear in the number of observations. Fixed effects and the
residual variance are profiled out, leaving a bounded optimisation over the
variance ratios ``lam >= 0``. REML adds ``log det(X' W X)`` and replaces
``n`` by ``n - p`` in the residual-variance terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from ..exceptions import InvalidInputError
from ..model_core import OrdinalDataset, validate
from ._numdiff import hessian_from_gradient, inverse_if_pd

__all__ = ["LmmOptions", "LmmFit", "fit_lmm", "LmmProblem"]

_LAM_MAX = 1e8


@dataclass(frozen=True)
class LmmOptions:
    """``method`` is ``"reml"`` (default) or ``"ml"``."""

    method: str = "reml"
    starts: tuple = (0.1, 1.0, 10.0)
    hessian_step: float = 1e-4
    newton_steps: int = 50


@dataclass(frozen=True)
class LmmFit:
    """Fitted naive linear mixed model.

    ``beta_hat`` starts with the intercept. ``vcov_varcomp`` is ordered
    ``(sigma_b^2[, sigma_c^2], sigma_eps^2)`` and is the inverse observed
    information of the criterion named by ``method``; ``loglik`` is that
    criterion at the optimum.
    """

    beta_hat: np.ndarray
    sigma_b_sq_hat: float
    sigma_eps_sq_hat: float
    loglik: float
    vcov_varcomp: Optional[np.ndarray]
    converged: bool
    sigma_c_sq_hat: Optional[float] = None
    boundary: tuple = ()
    n_obs: int = 0
    n_clusters: int = 0
    n_ears: Optional[int] = None
    method: str = "reml"
    gradient: np.ndarray = field(default=None, repr=False)

    @property
    def nested(self) -> bool:
        return self.sigma_c_sq_hat is not None

    @property
    def variance_estimates(self) -> np.ndarray:
        parts = [self.sigma_b_sq_hat] + ([self.sigma_c_sq_hat] if self.nested else []) + [self.sigma_eps_sq_hat]
        return np.array(parts, dtype=float)


class LmmProblem:
    """Sufficient statistics of ``y = X beta + Z_b b + Z_c c + e`` for fast likelihood evaluation.

    ``reml=True`` switches every criterion to the restricted likelihood.
    """

    def __init__(self, y, X, subjects, ears=None, reml=False):
        self.reml = bool(reml)
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float)
        subj = _codes(subjects)
        self.nested = ears is not None
        ear = _codes(ears) if self.nested else subj.copy()
        order = np.lexsort((ear, subj))
        subj, ear = subj[order], ear[order]
        self.n, self.p = X.shape
        M = np.column_stack([X[order], y[order]])
        self.MtM = M.T @ M
        ear_bounds = np.concatenate(([0], np.flatnonzero(np.diff(ear) != 0) + 1))
        self.E = np.add.reduceat(M, ear_bounds, axis=0)
        self.n_e = np.diff(np.append(ear_bounds, self.n)).astype(float)
        subj_of_ear = subj[ear_bounds]
        self.subj_bounds = np.concatenate(([0], np.flatnonzero(np.diff(subj_of_ear) != 0) + 1))
        self.n_subjects = len(self.subj_bounds)
        self.n_ears = len(ear_bounds)

    def _sum_by_subject(self, values):
        return np.add.reduceat(values, self.subj_bounds, axis=0)

    def _pieces(self, lam_b, lam_c):
        d = 1.0 / (1.0 + self.n_e * lam_c)
        a = lam_c * d
        tau = self._sum_by_subject(self.n_e * d)
        kappa = lam_b / (1.0 + lam_b * tau)
        S = self._sum_by_subject(d[:, None] * self.E)
        Q = self.MtM - (self.E * a[:, None]).T @ self.E - (S * kappa[:, None]).T @ S
        p = self.p
        A = Q[:p, :p]
        beta = np.linalg.solve(A, Q[:p, p])
        rss = Q[p, p] - Q[:p, p] @ beta
        logdet = np.sum(np.log1p(self.n_e * lam_c)) + np.sum(np.log1p(lam_b * tau))
        if self.reml:
            logdet += np.linalg.slogdet(A)[1]
        return beta, rss, logdet, d, tau, kappa, A

    def _derivs(self, beta, d, tau, kappa, lam_b, A):
        """d RSS / d lam and d logdet / d lam for (lam_b, lam_c)."""
        p = self.p
        # columns: residual, then X (the latter only feed the REML term)
        C = np.column_stack([self.E[:, p] - self.E[:, :p] @ beta, self.E[:, :p]])
        counts = np.diff(np.append(self.subj_bounds, self.n_ears))
        T = self._sum_by_subject(d[:, None] * C)
        subj_w = T / (1.0 + lam_b * tau)[:, None]
        kappa_e = np.repeat(kappa, counts)
        ear_w = d[:, None] * C - (kappa_e * d * self.n_e)[:, None] * np.repeat(T, counts, axis=0)
        drss = np.array([-np.sum(subj_w[:, 0] ** 2), -np.sum(ear_w[:, 0] ** 2)])
        dlogdet_b = np.sum(tau / (1.0 + lam_b * tau))
        dlogdet_c = np.sum(self.n_e * d) - np.sum(kappa_e * (self.n_e * d) ** 2)
        dlogdet = np.array([dlogdet_b, dlogdet_c])
        if self.reml:
            Ainv = np.linalg.inv(A)
            for k, W in enumerate((subj_w[:, 1:], ear_w[:, 1:])):
                dlogdet[k] -= np.sum((W @ Ainv) * W)
        return drss, dlogdet

    @property
    def dof(self) -> int:
        """Residual degrees of freedom of the criterion."""
        return self.n - self.p if self.reml else self.n

    def _lams(self, lam):
        lam = np.asarray(lam, dtype=float)
        return float(lam[0]), float(lam[1]) if self.nested else 0.0

    def deviance(self, lam):
        """``-2 *`` log-likelihood profiled over beta and sigma_e^2, and its gradient in ``lam``."""
        lam_b, lam_c = self._lams(lam)
        beta, rss, logdet, d, tau, kappa, A = self._pieces(lam_b, lam_c)
        drss, dlogdet = self._derivs(beta, d, tau, kappa, lam_b, A)
        n = self.dof
        dev = n * math.log(2 * math.pi * rss / n) + logdet + n
        grad = n * drss / rss + dlogdet
        return dev, (grad if self.nested else grad[:1])

    def loglik(self, sigmas) -> float:
        """Log-likelihood at ``(sigma_b^2[, sigma_c^2], sigma_e^2)``, beta profiled out."""
        sigmas = np.asarray(sigmas, dtype=float)
        se2 = sigmas[-1]
        lam_b, lam_c = self._lams(sigmas[:-1] / se2)
        beta, rss, logdet, *_ = self._pieces(lam_b, lam_c)
        return -0.5 * (self.dof * math.log(2 * math.pi * se2) + logdet + rss / se2)

    def loglik_grad(self, sigmas) -> np.ndarray:
        sigmas = np.asarray(sigmas, dtype=float)
        se2 = sigmas[-1]
        lam = sigmas[:-1] / se2
        lam_b, lam_c = self._lams(lam)
        beta, rss, logdet, d, tau, kappa, A = self._pieces(lam_b, lam_c)
        drss, dlogdet = self._derivs(beta, d, tau, kappa, lam_b, A)
        k = 2 if self.nested else 1
        dl_dlam = -0.5 * (dlogdet[:k] + drss[:k] / se2)
        g = np.empty(k + 1)
        g[:k] = dl_dlam / se2
        g[k] = -0.5 * (self.dof / se2 - rss / se2 ** 2) - np.sum(dl_dlam * lam) / se2
        return g

    def gls(self, lam):
        lam_b, lam_c = self._lams(lam)
        beta, rss, *_ = self._pieces(lam_b, lam_c)
        return beta, rss


def _codes(values) -> np.ndarray:
    mapping = {}
    return np.array([mapping.setdefault(v, len(mapping)) for v in values], dtype=np.int64)


def _polish(problem, lam, options):
    """Newton iterations on the interior ratios; components pinned at 0 stay there."""
    lam = np.array(lam, dtype=float)
    for _ in range(options.newton_steps):
        dev, g = problem.deviance(lam)
        free = ~((lam <= 0.0) & (g >= 0.0))
        if not free.any():
            break
        idx = np.flatnonzero(free)

        def gfree(x):
            full = lam.copy()
            full[idx] = x
            return problem.deviance(full)[1][idx]

        H = hessian_from_gradient(gfree, lam[idx], 1e-6, lower=np.zeros(idx.size))
        try:
            step = -np.linalg.solve(H, g[idx])
        except np.linalg.LinAlgError:
            break
        if np.any(~np.isfinite(step)):
            break
        t = 1.0
        while t > 1e-8:
            cand = lam.copy()
            cand[idx] = np.clip(lam[idx] + t * step, 0.0, _LAM_MAX)
            if problem.deviance(cand)[0] <= dev + 1e-12 * abs(dev):
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(cand - lam) / (1.0 + np.abs(lam)))
        lam = cand
        if moved < 1e-15:
            break
    return lam


def fit_lmm(data: OrdinalDataset, options: Optional[LmmOptions] = None, scores=None) -> LmmFit:
    """REML (default) or ML fit of the linear mixed model to numeric category scores.

    Parameters
    ----------
    data : OrdinalDataset
        Single-level or nested; an intercept is added to the covariates.
    options : LmmOptions, optional
    scores : array_like, optional
        Numeric value for each code ``1..K``; defaults to the codes themselves.

    Returns
    -------
    LmmFit
        Components estimated at zero are listed in ``boundary``; their rows of
        ``vcov_varcomp`` come from one-sided differences.
    """
    problems = validate(data)
    if problems:
        raise InvalidInputError("; ".join(v.message for v in problems))
    options = options or LmmOptions()
    if options.method not in ("reml", "ml"):
        raise InvalidInputError(f"method must be 'reml' or 'ml', got {options.method!r}")
    reml = options.method == "reml"
    codes = np.asarray(data.categories)
    if scores is None:
        y = codes.astype(float)
    else:
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (data.n_categories,):
            raise InvalidInputError(f"need {data.n_categories} scores")
        y = scores[codes - 1]
    X = np.column_stack([np.ones(data.n_obs), data.covariates])
    # standardise so affine recodings of the scores reach the same optimum bit for bit
    center, spread = float(np.mean(y)), float(np.std(y))
    if not spread > 0:
        raise InvalidInputError("scores are constant across observations")
    y = (y - center) / spread
    nested = data.nesting == "nested"
    if nested:
        problem = LmmProblem(y, X, data.subject_ids, data.cluster_keys(), reml=reml)
    else:
        problem = LmmProblem(y, X, data.cluster_keys(), reml=reml)
    k = 2 if nested else 1
    bounds = [(0.0, _LAM_MAX)] * k
    best = None
    candidates = [np.full(k, s) for s in options.starts] + [np.zeros(k)]
    for x0 in candidates:
        res = optimize.minimize(problem.deviance, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 1000})
        if best is None or res.fun < best.fun:
            best = res
    lam = _polish(problem, best.x, options)
    dev, g = problem.deviance(lam)
    beta, rss = problem.gls(lam)
    se2 = rss / problem.dof
    sig = lam * se2
    sigmas = np.append(sig, se2)
    boundary_names = ("sigma_b_sq", "sigma_c_sq")[:k]
    boundary = tuple(name for name, v in zip(boundary_names, lam) if v <= 0.0)
    lower = np.append(np.zeros(k), 0.0)
    H = hessian_from_gradient(problem.loglik_grad, sigmas, options.hessian_step, lower=lower)
    vcov = inverse_if_pd(-H)
    free = lam > 0
    beta = beta * spread
    beta[0] += center
    sigmas = sigmas * spread ** 2
    sig, se2 = sigmas[:k], sigmas[k]
    if vcov is not None:
        vcov = vcov * spread ** 4
    converged = bool(np.all(np.abs(g[free]) <= 1e-6 * max(1.0, abs(dev))) and np.all(g[~free] >= -1e-8))
    dev = dev + 2.0 * problem.dof * math.log(spread)
    return LmmFit(
        beta_hat=beta,
        sigma_b_sq_hat=float(sig[0]),
        sigma_c_sq_hat=float(sig[1]) if nested else None,
        sigma_eps_sq_hat=float(se2),
        loglik=-0.5 * dev,
        vcov_varcomp=vcov,
        converged=converged,
        boundary=boundary,
        n_obs=data.n_obs,
        n_clusters=data.n_clusters,
        n_ears=data.n_ears,
        method=options.method,
        gradient=g,
    )
