"""Marginal likelihood of cumulative-link mixed models.

Random intercepts are integrated out with adaptive Gauss-Hermite quadrature:
each cluster's integral is recentred at the conditional mode of the random
effect and rescaled by the curvature there. The nested model integrates the
ear effect inside the subject effect with two 1-D rules.

The working parameter vector is ``[xi_1, log(xi_2 - xi_1), ..., beta,
log sigma_b(, log sigma_c)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from . import _kernels
from .exceptions import InvalidInputError, LikelihoodEvaluationError
from .model_core import OrdinalDataset, ThresholdSet

__all__ = [
    "LINKS",
    "ClmmParams",
    "QuadratureRule",
    "DEFAULT_NODES",
    "default_rule",
    "ClmmProblem",
    "cell_prob",
    "link_cdf",
    "link_ppf",
    "link_variance",
    "loglik_single",
    "loglik_nested",
    "loglik",
    "loglik_gradient",
]

LINKS = ("probit", "logistic")
_LINK_CODE = {"probit": _kernels.PROBIT, "logistic": _kernels.LOGISTIC}


def _check_link(link):
    if link not in _LINK_CODE:
        raise InvalidInputError(f"link must be one of {LINKS}, got {link!r}")
    return _LINK_CODE[link]


def link_cdf(x, link):
    _check_link(link)
    x = np.asarray(x, dtype=float)
    return special.ndtr(x) if link == "probit" else special.expit(x)


def link_ppf(p, link):
    _check_link(link)
    p = np.asarray(p, dtype=float)
    return special.ndtri(p) if link == "probit" else special.logit(p)


def link_variance(link) -> float:
    """Variance of the standardised latent error: 1 (probit) or pi^2/3 (logistic)."""
    _check_link(link)
    return 1.0 if link == "probit" else math.pi ** 2 / 3.0


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule (physicists' convention, weight ``exp(-t^2)``).

    Weights sum to ``sqrt(pi)``. With ``adaptive=True`` the nodes are shifted
    and scaled per cluster around the conditional mode of the random effect.
    """

    n_nodes: int = 15
    adaptive: bool = True
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise InvalidInputError("n_nodes must be a positive integer")
        t, w = np.polynomial.hermite.hermgauss(int(self.n_nodes))
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", t)
        object.__setattr__(self, "weights", w)

    @property
    def log_weights_adj(self) -> np.ndarray:
        return np.log(self.weights) + self.nodes ** 2


# nodes per random-effect dimension; nested cost grows with the square
DEFAULT_NODES = {"single": 31, "nested": 15}


def default_rule(nesting: str) -> QuadratureRule:
    """Adaptive rule with the default node count for ``nesting``."""
    return QuadratureRule(DEFAULT_NODES[nesting])


@dataclass(frozen=True)
class ClmmParams:
    """Cumulative-link mixed model parameters on the working scale."""

    thresholds: ThresholdSet
    beta: np.ndarray
    log_sigma_b: float
    log_sigma_c: Optional[float] = None
    link: str = "probit"

    def __post_init__(self):
        if not isinstance(self.thresholds, ThresholdSet):
            object.__setattr__(self, "thresholds", ThresholdSet(self.thresholds))
        beta = np.array(np.atleast_1d(self.beta), dtype=float)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        _check_link(self.link)
        # -inf encodes a variance fixed at exactly zero
        if math.isnan(self.log_sigma_b) or self.log_sigma_b == math.inf:
            raise InvalidInputError("log_sigma_b must be < +inf")
        if self.log_sigma_c is not None and (math.isnan(self.log_sigma_c) or self.log_sigma_c == math.inf):
            raise InvalidInputError("log_sigma_c must be < +inf")

    @property
    def nested(self) -> bool:
        return self.log_sigma_c is not None

    @property
    def sigma_b(self) -> float:
        return math.exp(self.log_sigma_b)

    @property
    def sigma_c(self) -> Optional[float]:
        return None if self.log_sigma_c is None else math.exp(self.log_sigma_c)

    @property
    def sigma_b_sq(self) -> float:
        return self.sigma_b ** 2

    @property
    def sigma_c_sq(self) -> Optional[float]:
        return None if self.log_sigma_c is None else self.sigma_c ** 2

    def to_vector(self) -> np.ndarray:
        xi = self.thresholds.xi
        parts = [xi[:1], np.log(np.diff(xi)), self.beta, [self.log_sigma_b]]
        if self.nested:
            parts.append([self.log_sigma_c])
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_vector(cls, theta, n_categories: int, n_covariates: int, nested: bool, link: str) -> "ClmmParams":
        theta = np.asarray(theta, dtype=float)
        expected = n_categories - 1 + n_covariates + 1 + int(nested)
        if theta.shape != (expected,):
            raise InvalidInputError(f"parameter vector has length {theta.size}, expected {expected}")
        return cls(
            thresholds=ThresholdSet(thresholds_from_working(theta[: n_categories - 1])),
            beta=theta[n_categories - 1 : n_categories - 1 + n_covariates],
            log_sigma_b=float(theta[n_categories - 1 + n_covariates]),
            log_sigma_c=float(theta[-1]) if nested else None,
            link=link,
        )


def thresholds_from_working(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.cumsum(np.concatenate((a[:1], np.exp(a[1:]))))


def _threshold_jacobian_t(a, grad_xi):
    """Map d/d xi to d/d working thresholds."""
    # xi_k = a_1 + sum_{m=2..k} exp(a_m)
    out = np.empty_like(grad_xi)
    tail = np.cumsum(grad_xi[::-1])[::-1]
    out[0] = tail[0]
    out[1:] = np.exp(a[1:]) * tail[1:]
    return out


def cell_prob(k, eta, thresholds, link: str = "probit"):
    """Probability of category ``k`` given linear predictor ``eta``.

    ``F(xi_k - eta) - F(xi_{k-1} - eta)`` with ``xi_0 = -inf`` and
    ``xi_K = +inf``; floored at 1e-300.

    Parameters
    ----------
    k : int or array_like of int
        Category codes in ``1..K``.
    eta : float or array_like
        Linear predictor, random effects included.
    thresholds : ThresholdSet or array_like
    link : {"probit", "logistic"}
    """
    code = _check_link(link)
    if not isinstance(thresholds, ThresholdSet):
        thresholds = ThresholdSet(thresholds)
    ext = thresholds.extended()
    k_arr, eta_arr = np.broadcast_arrays(np.asarray(k), np.asarray(eta, dtype=float))
    if np.any((k_arr < 1) | (k_arr > thresholds.n_categories)):
        raise InvalidInputError(f"category codes must lie in 1..{thresholds.n_categories}")
    flat_k = k_arr.ravel().astype(np.int64)
    lp = _kernels.cell_logprob(ext[flat_k - 1], ext[flat_k], eta_arr.ravel().copy(), code)
    out = np.exp(lp).reshape(k_arr.shape)
    return float(out) if out.ndim == 0 else out


class ClmmProblem:
    """Data arrays of one dataset arranged for repeated likelihood evaluation.

    Observations are sorted by cluster (and ear) once; cluster order follows
    first appearance in the data.
    """

    def __init__(self, data: OrdinalDataset, link: str = "probit", rule: Optional[QuadratureRule] = None,
                 nested: Optional[bool] = None):
        self.link = link
        self.link_code = _check_link(link)
        self.nested = data.nesting == "nested" if nested is None else nested
        self.rule = rule if rule is not None else default_rule("nested" if self.nested else "single")
        self.K = data.n_categories
        self.p = data.n_covariates
        self.n_params = self.K - 1 + self.p + 1 + int(self.nested)
        if self.nested:
            subj = _codes(data.subject_ids)
            ear = _codes(data.cluster_keys())
            order = np.lexsort((ear, subj))
            subj, ear = subj[order], ear[order]
            ear_bounds = np.flatnonzero(np.diff(ear) != 0) + 1
            self.ear_starts = np.concatenate(([0], ear_bounds, [len(ear)])).astype(np.int64)
            first_of_ear = self.ear_starts[:-1]
            subj_of_ear = subj[first_of_ear]
            subj_bounds = np.flatnonzero(np.diff(subj_of_ear) != 0) + 1
            self.subj_starts = np.concatenate(([0], subj_bounds, [len(subj_of_ear)])).astype(np.int64)
            self.cluster_labels = _unique_in_order(np.asarray(data.subject_ids)[order][first_of_ear[self.subj_starts[:-1]]])
        else:
            cl = _codes(data.cluster_keys())
            order = np.argsort(cl, kind="stable")
            cl = cl[order]
            bounds = np.flatnonzero(np.diff(cl) != 0) + 1
            self.starts = np.concatenate(([0], bounds, [len(cl)])).astype(np.int64)
            self.cluster_labels = list(np.asarray(data.cluster_keys())[order][self.starts[:-1]])
        self.order = order
        self.y = np.asarray(data.categories, dtype=np.int64)[order]
        self.X = np.ascontiguousarray(np.asarray(data.covariates, dtype=float)[order])
        self.n_obs = len(self.y)
        self._upper_idx = self.y  # index into [-inf, xi..., inf]
        self._lower_idx = self.y - 1

    @property
    def n_clusters(self) -> int:
        return len(self.subj_starts) - 1 if self.nested else len(self.starts) - 1

    def unpack(self, theta) -> ClmmParams:
        return ClmmParams.from_vector(theta, self.K, self.p, self.nested, self.link)

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        K1 = self.K - 1
        a = theta[:K1]
        beta = theta[K1 : K1 + self.p]
        log_sb = theta[K1 + self.p]
        log_sc = theta[K1 + self.p + 1] if self.nested else None
        return a, beta, log_sb, log_sc

    def _evaluate(self, a, beta, log_sb, log_sc, want_grad):
        xi = thresholds_from_working(a)
        ext = np.concatenate(([-np.inf], xi, [np.inf]))
        lower = ext[self._lower_idx]
        upper = ext[self._upper_idx]
        eta = self.X @ beta if self.p else np.zeros(self.n_obs)
        sb = math.exp(log_sb)
        rule = self.rule
        logw = rule.log_weights_adj
        if self.nested:
            sc = math.exp(log_sc)
            ll, grads = _kernels.nested(lower, upper, eta, self.subj_starts, self.ear_starts, sb, sc,
                                        rule.nodes, logw, rule.adaptive, self.link_code, want_grad)
        else:
            sc = None
            ll, grads = _kernels.single_level(lower, upper, eta, self.starts, sb, rule.nodes, logw,
                                              rule.adaptive, self.link_code, want_grad)
        bad = np.flatnonzero(~np.isfinite(ll))
        if bad.size:
            raise LikelihoodEvaluationError(
                f"non-finite log-likelihood contribution for cluster {self.cluster_labels[bad[0]]!r}",
                cluster=self.cluster_labels[bad[0]],
            )
        return xi, sb, sc, ll, grads

    def loglik(self, theta) -> float:
        a, beta, log_sb, log_sc = self._split(theta)
        _, _, _, ll, _ = self._evaluate(a, beta, log_sb, log_sc, False)
        return float(math.fsum(ll))

    def cluster_logliks(self, theta) -> np.ndarray:
        a, beta, log_sb, log_sc = self._split(theta)
        return self._evaluate(a, beta, log_sb, log_sc, False)[3]

    def loglik_and_grad(self, theta):
        """Log-likelihood and its analytic gradient in the working parameters.

        The gradient is exact for the quadrature approximation itself: the
        movement of each adaptive centre and scale with the parameters is
        included by implicit differentiation of the conditional mode.
        """
        a, beta, log_sb, log_sc = self._split(theta)
        xi, sb, sc, ll, grads = self._evaluate(a, beta, log_sb, log_sc, True)
        K1 = self.K - 1
        gxi = np.zeros(self.K + 1)
        np.add.at(gxi, self._upper_idx, grads[0])
        np.add.at(gxi, self._lower_idx, grads[1])
        grad = np.empty(self.n_params)
        grad[:K1] = _threshold_jacobian_t(a, gxi[1 : self.K])
        grad[K1 : K1 + self.p] = self.X.T @ grads[2]
        grad[K1 + self.p] = sb * grads[3].sum()
        if self.nested:
            grad[-1] = sc * grads[4].sum()
        return float(math.fsum(ll)), grad

    def start_vector(self, log_sigma: float = 0.0) -> np.ndarray:
        """Thresholds from the inverse link of the cumulative category frequencies."""
        counts = np.bincount(self.y, minlength=self.K + 1)[1:]
        cum = np.cumsum(counts)[:-1] / self.n_obs
        xi = link_ppf(cum, self.link)
        a = np.concatenate((xi[:1], np.log(np.maximum(np.diff(xi), 1e-3))))
        sig = [log_sigma] * (1 + int(self.nested))
        return np.concatenate((a, np.zeros(self.p), sig))


def _codes(values) -> np.ndarray:
    mapping = {}
    return np.array([mapping.setdefault(v, len(mapping)) for v in values], dtype=np.int64)


def _unique_in_order(values) -> list:
    return list(dict.fromkeys(values))


def _check_params(params: ClmmParams, data: OrdinalDataset, nested: bool):
    if params.nested != nested:
        which = "needs" if nested else "must not have"
        raise InvalidInputError(f"{'nested' if nested else 'single-level'} likelihood {which} log_sigma_c")
    if params.thresholds.n_categories != data.n_categories:
        raise InvalidInputError(
            f"{params.thresholds.n_categories} categories in thresholds, {data.n_categories} in data"
        )
    if params.beta.size != data.n_covariates:
        raise InvalidInputError(f"beta has {params.beta.size} entries, data has {data.n_covariates} covariates")


def loglik_single(params: ClmmParams, data: OrdinalDataset, rule: Optional[QuadratureRule] = None) -> float:
    """Marginal log-likelihood with one random intercept per cluster.

    Clusters are subjects, or ``(subject, ear)`` pairs when ear ids exist.
    """
    if data.nesting != "single":
        raise InvalidInputError("loglik_single needs single-level data")
    _check_params(params, data, nested=False)
    return ClmmProblem(data, params.link, rule).loglik(params.to_vector())


def loglik_nested(params: ClmmParams, data: OrdinalDataset, rule: Optional[QuadratureRule] = None) -> float:
    """Marginal log-likelihood with subject and ear-within-subject intercepts."""
    if data.nesting != "nested":
        raise InvalidInputError("loglik_nested needs nested data")
    _check_params(params, data, nested=True)
    return ClmmProblem(data, params.link, rule).loglik(params.to_vector())


def loglik(params: ClmmParams, data: OrdinalDataset, rule: Optional[QuadratureRule] = None) -> float:
    """Dispatch to :func:`loglik_single` or :func:`loglik_nested` by ``data.nesting``."""
    if data.nesting == "nested":
        return loglik_nested(params, data, rule)
    return loglik_single(params, data, rule)


def loglik_gradient(params: ClmmParams, data: OrdinalDataset, rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """Analytic gradient of the marginal log-likelihood in the working parameters.

    Ordering matches :meth:`ClmmParams.to_vector`.
    """
    _check_params(params, data, nested=data.nesting == "nested")
    return ClmmProblem(data, params.link, rule).loglik_and_grad(params.to_vector())[1]
