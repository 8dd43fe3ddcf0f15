"""scikit-learn style estimators for clustered ordinal outcomes.

Both classes take ``fit(X, y, groups, ears=None)``: ``groups`` labels the
subject of each row and ``ears`` (optional) a second, nested level whose
labels only need to be unique within a subject.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_clustered, check_features
from .analysis import clmm_icc, naive_icc
from .estimation.clmm import FitOptions, fit_clmm
from .estimation.lmm import LmmOptions, fit_lmm
from .icc import icc_from_clmm
from .likelihood import QuadratureRule, link_cdf
from .model_core import canonicalize

__all__ = ["CumulativeLinkMixedModel", "NaiveLinearMixedModel"]


def _dataset(X, y, groups, ears):
    X, y, groups, ears = check_clustered(X, y, groups, ears)
    ear_ids = None if ears is None else list(zip(groups, ears))
    data = canonicalize(y, X, groups, ear_ids=ear_ids, nesting="nested" if ears is not None else "single")
    return X, data


class CumulativeLinkMixedModel(BaseEstimator):
    """Cumulative probit or logistic model with random intercepts.

    Parameters
    ----------
    link : {"probit", "logistic"}
    quad_nodes : int, optional
        Adaptive Gauss-Hermite nodes per random effect; None picks the
        default for the clustering structure.
    level : float
        Confidence level of ``icc_ci_``.
    compute_ci : bool
        Profile interval (single-level) or delta interval (nested).
    gtol : float
        Convergence tolerance on the gradient sup-norm.

    Attributes
    ----------
    classes_ : ndarray
        Sorted distinct labels of ``y``.
    thresholds_ : ndarray of shape (n_classes - 1,)
    coef_ : ndarray of shape (n_features,)
    sigma_b_sq_, sigma_c_sq_ : float
        ``sigma_c_sq_`` is None without ``ears``.
    icc_ : float
    icc_ci_ : tuple or None
    fit_ : ClmmFit
    """

    def __init__(self, link="probit", quad_nodes=None, level=0.95, compute_ci=True, gtol=1e-6):
        self.link = link
        self.quad_nodes = quad_nodes
        self.level = level
        self.compute_ci = compute_ci
        self.gtol = gtol

    def fit(self, X, y, groups=None, ears=None):
        X, data = _dataset(X, y, groups, ears)
        rule = None if self.quad_nodes is None else QuadratureRule(self.quad_nodes)
        options = FitOptions(gtol=self.gtol)
        fit = fit_clmm(data, self.link, rule, options)
        if self.compute_ci:
            est = clmm_icc(fit, data, self.level, rule, options)
        else:
            est = icc_from_clmm(fit)
        self.fit_ = fit
        self.icc_estimate_ = est
        self.classes_ = np.array(data.category_labels)
        self.n_features_in_ = X.shape[1]
        self.thresholds_ = fit.params.thresholds.xi.copy()
        self.coef_ = fit.params.beta.copy()
        self.sigma_b_sq_ = fit.sigma_b_sq
        self.sigma_c_sq_ = fit.sigma_c_sq
        self.icc_ = est.value
        self.icc_ci_ = est.ci
        self.loglik_ = fit.loglik
        self.converged_ = fit.converged
        return self

    def predict_proba(self, X):
        """Population-averaged category probabilities (random effects integrated out)."""
        check_is_fitted(self, "fit_")
        X = check_features(X, self.n_features_in_)
        eta = X @ self.coef_
        total = self.sigma_b_sq_ + (self.sigma_c_sq_ or 0.0)
        t, w = np.polynomial.hermite.hermgauss(40)
        u = np.sqrt(2.0 * total) * t
        w = w / np.sqrt(np.pi)
        cum = link_cdf(self.thresholds_[None, :, None] - eta[:, None, None] - u[None, None, :], self.link) @ w
        cum = np.concatenate([np.zeros((len(eta), 1)), cum, np.ones((len(eta), 1))], axis=1)
        return np.clip(np.diff(cum, axis=1), 0.0, 1.0)

    def predict(self, X):
        """Most probable category under the population-averaged model."""
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class NaiveLinearMixedModel(BaseEstimator):
    """Linear mixed model on ordinal codes, fitted by REML or ML.

    Parameters
    ----------
    method : {"reml", "ml"}
        Variance-component criterion.
    level : float
        Confidence level of the delta-method ``icc_ci_``.
    scores : array_like, optional
        Numeric value for each sorted class; defaults to ``1..K``.

    Attributes
    ----------
    classes_ : ndarray
    intercept_ : float
    coef_ : ndarray of shape (n_features,)
    sigma_b_sq_, sigma_c_sq_, sigma_eps_sq_ : float
    icc_ : float
    icc_ci_ : tuple or None
    fit_ : LmmFit
    """

    def __init__(self, method="reml", level=0.95, scores=None):
        self.method = method
        self.level = level
        self.scores = scores

    def fit(self, X, y, groups=None, ears=None):
        X, data = _dataset(X, y, groups, ears)
        fit = fit_lmm(data, LmmOptions(method=self.method), scores=self.scores)
        est = naive_icc(fit, self.level)
        self.fit_ = fit
        self.icc_estimate_ = est
        self.classes_ = np.array(data.category_labels)
        self.n_features_in_ = X.shape[1]
        self.intercept_ = float(fit.beta_hat[0])
        self.coef_ = np.asarray(fit.beta_hat[1:], dtype=float)
        self.sigma_b_sq_ = fit.sigma_b_sq_hat
        self.sigma_c_sq_ = fit.sigma_c_sq_hat
        self.sigma_eps_sq_ = fit.sigma_eps_sq_hat
        self.icc_ = est.value
        self.icc_ci_ = est.ci
        self.loglik_ = fit.loglik
        self.converged_ = fit.converged
        return self

    def predict(self, X):
        """Population mean score."""
        check_is_fitted(self, "fit_")
        X = check_features(X, self.n_features_in_)
        return self.intercept_ + X @ self.coef_
