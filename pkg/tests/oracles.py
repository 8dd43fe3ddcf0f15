"""Independent reference computations used by the tests.

Everything here is deliberately slow and simple: dense-grid integration with
scipy's Simpson rule and plain finite differences.
"""
import math

import numpy as np
from scipy import integrate, special

from ordicc.model_core import canonicalize


def cdf(x, link):
    return special.ndtr(x) if link == "probit" else special.expit(x)


def cell_probs(y, eta, xi, link):
    ext = np.concatenate(([-np.inf], xi, [np.inf]))
    hi, lo = ext[y] - eta, ext[y - 1] - eta
    # reflect cells in the upper tail to avoid cancellation between CDF values near 1
    with np.errstate(invalid="ignore"):
        return np.where(lo > 0, cdf(-lo, link) - cdf(-hi, link), cdf(hi, link) - cdf(lo, link))


def brute_single(y, eta, clusters, xi, sigma_b, link, half_width=10.0, n=200001):
    """Sum over clusters of log of the integral over z in [-w, w] of prod p(y | eta + sigma z) phi(z)."""
    z = np.linspace(-half_width, half_width, n)
    phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    total = 0.0
    for c in dict.fromkeys(clusters):
        idx = [i for i, k in enumerate(clusters) if k == c]
        f = phi.copy()
        for i in idx:
            f *= cell_probs(y[i], eta[i] + sigma_b * z, xi, link)
        total += math.log(integrate.simpson(f, x=z))
    return total


def brute_nested(y, eta, subjects, ears, xi, sigma_b, sigma_c, link, half_width=9.0, n=2001):
    """Tensor-grid Simpson integration over (b, c) for subject/ear random intercepts."""
    z = np.linspace(-half_width, half_width, n)
    phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    total = 0.0
    for s in dict.fromkeys(subjects):
        rows = [i for i, k in enumerate(subjects) if k == s]
        outer = phi.copy()
        for e in dict.fromkeys(ears[i] for i in rows):
            er = [i for i in rows if ears[i] == e]
            # grid over (b on axis 0, c on axis 1)
            f = np.ones((n, n))
            for i in er:
                f *= cell_probs(y[i], eta[i] + sigma_b * z[:, None] + sigma_c * z[None, :], xi, link)
            outer *= integrate.simpson(f * phi[None, :], x=z, axis=1)
        total += math.log(integrate.simpson(outer, x=z))
    return total


def independent_loglik(y, eta, xi, link):
    return float(np.sum(np.log(cell_probs(np.asarray(y), np.asarray(eta), xi, link))))


def central_gradient(f, x, rel=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def random_small_instance(rng, nested=False, max_clusters=3, max_obs=3, max_k=4):
    """Small random dataset with every category in 1..K observed."""
    K = int(rng.integers(2, max_k + 1))
    while True:
        n_cl = int(rng.integers(1, max_clusters + 1))
        subjects, ears = [], []
        for s in range(n_cl):
            n_ears = int(rng.integers(1, 3)) if nested else 1
            for e in range(n_ears):
                for _ in range(int(rng.integers(1, max_obs + 1))):
                    subjects.append(f"s{s}")
                    ears.append((f"s{s}", f"e{e}"))
        n = len(subjects)
        if n < K:
            continue
        y = rng.permutation(np.concatenate([np.arange(1, K + 1), rng.integers(1, K + 1, n - K)]))
        x = rng.normal(size=(n, 1))
        data = canonicalize(y, x, subjects, ear_ids=ears if nested else None)
        return data
