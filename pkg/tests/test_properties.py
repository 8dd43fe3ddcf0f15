import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ordicc.estimation import fit_lmm
from ordicc.icc import delta_ci, icc_from_lmm, transform_profile_ci
from ordicc.likelihood import cell_prob, link_variance
from ordicc.model_core import CutpointLattice, canonicalize, discretize

variances = st.floats(0.0, 1e3, allow_nan=False)
positive = st.floats(1e-3, 1e3, allow_nan=False)
links = st.sampled_from(["probit", "logistic"])


def ratio(s, m):
    return s / (s + m)


@given(positive, positive, links)
def test_icc_increasing_in_variance(a, b, link):
    m = link_variance(link)
    lo, hi = sorted((a, b))
    assert ratio(lo, m) <= ratio(hi, m)


@given(positive)
def test_logistic_icc_below_probit(s):
    assert ratio(s, link_variance("logistic")) < ratio(s, link_variance("probit"))


@given(variances, variances, variances, st.sampled_from([1.0, math.pi ** 2 / 3]))
def test_transform_preserves_order_and_containment(a, b, c, m):
    lo, mid, hi = sorted((a, b, c))
    t_lo, t_hi = transform_profile_ci((lo, hi), m)
    assert 0.0 <= t_lo <= ratio(mid, m) <= t_hi <= 1.0


@given(positive, positive, st.floats(0.0, 10.0), st.floats(0.5, 0.99))
def test_delta_interval_bounded_and_contains_point(sb, se, var_scale, level):
    V = var_scale * np.array([[1.0, 0.3], [0.3, 1.0]])
    lo, hi = delta_ci([sb, se], V, "single", m=None, level=level)
    assert 0.0 <= lo <= sb / (sb + se) + 1e-12
    assert sb / (sb + se) - 1e-12 <= hi <= 1.0


@given(st.floats(-1e6, 1e6), st.floats(-50, 50), st.floats(0.01, 100))
def test_discretize_cell_membership(y, anchor, spacing):
    n = discretize(y, CutpointLattice(anchor, spacing))
    # right-closed cells, checked with a relative slack for the division
    slack = 1e-9 * max(1.0, abs(y), abs(anchor))
    assert anchor + (n - 1) * spacing < y + slack
    assert y <= anchor + n * spacing + slack


@given(st.lists(st.integers(-20, 20), min_size=2, max_size=30).filter(lambda v: len(set(v)) > 1))
def test_canonical_codes_preserve_order(labels):
    data = canonicalize(labels, np.zeros((len(labels), 0)), list(range(len(labels))))
    codes = data.categories
    for i in range(len(labels)):
        for j in range(len(labels)):
            assert (labels[i] < labels[j]) == (codes[i] < codes[j])
    assert set(codes.tolist()) == set(range(1, data.n_categories + 1))


@given(st.lists(st.floats(-8, 8), min_size=1, max_size=6, unique=True), st.floats(-10, 10), links)
def test_cell_probabilities_partition_unity(xi, eta, link):
    xi = np.sort(np.array(xi))
    if np.any(np.diff(xi) < 1e-6):
        return
    probs = [cell_prob(k, eta, xi, link) for k in range(1, xi.size + 2)]
    assert all(p >= 0 for p in probs)
    assert abs(sum(probs) - 1.0) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 20.0), st.floats(-50.0, 50.0), st.integers(0, 10_000))
def test_naive_icc_affine_invariant(a, b, seed):
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(8), 4)
    y = np.clip(np.round(rng.normal(size=8)[groups] + rng.normal(size=32)) + 3, 1, 5).astype(int)
    if np.unique(y).size < 2:
        return
    data = canonicalize(y, rng.normal(size=(32, 1)), groups)
    base = icc_from_lmm(fit_lmm(data)).value
    scores = a * np.arange(1, data.n_categories + 1) + b
    shifted = icc_from_lmm(fit_lmm(data, scores=scores)).value
    assert abs(base - shifted) <= 1e-10
    assert 0.0 <= base <= 1.0
