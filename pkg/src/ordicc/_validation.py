"""Input checks shared by the estimator classes."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import InvalidInputError


def check_clustered(X, y, groups, ears=None):
    """Validate a design matrix, ordinal labels and cluster labels.

    Returns
    -------
    X : ndarray of shape (n, p), float
    y : ndarray of shape (n,)
    groups : list
    ears : list or None
    """
    X = check_array(X, ensure_2d=True, dtype=float, ensure_all_finite=True, ensure_min_features=0)
    y = np.asarray(y)
    if y.ndim != 1:
        raise InvalidInputError("y must be one-dimensional")
    if groups is None:
        raise InvalidInputError("groups (cluster labels) are required")
    groups = list(np.asarray(groups, dtype=object).ravel())
    if ears is not None:
        ears = list(np.asarray(ears, dtype=object).ravel())
        check_consistent_length(X, y, groups, ears)
    else:
        check_consistent_length(X, y, groups)
    if any(g is None for g in groups):
        raise InvalidInputError("groups contain missing labels")
    return X, y, groups, ears


def check_features(X, n_features):
    X = check_array(X, ensure_2d=True, dtype=float, ensure_all_finite=True, ensure_min_features=0)
    if X.shape[1] != n_features:
        raise InvalidInputError(f"X has {X.shape[1]} features, model was fitted with {n_features}")
    return X
