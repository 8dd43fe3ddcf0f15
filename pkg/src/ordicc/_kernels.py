"""Compiled inner loops for the cumulative-link marginal likelihood.

Observations arrive sorted by cluster (and by ear within subject for the
nested model); ``starts`` arrays delimit the groups. Quadrature uses the
physicists' Gauss-Hermite rule; ``logw_adj[q] = log(w_q) + t_q**2``.
"""
import math

import numpy as np
from numba import njit

PROBIT = 0
LOGISTIC = 1

P_FLOOR = 1e-300
_SQRT2 = math.sqrt(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_NEWTON_TOL = 1e-7  # on the step; iterate error is ~tol**2
_NEWTON_MAXIT = 60


@njit(cache=True)
def _cdf(x, link):
    if link == PROBIT:
        return 0.5 * math.erfc(-x / _SQRT2)
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _pdf(x, link):
    if link == PROBIT:
        return math.exp(-0.5 * x * x - _HALF_LOG_2PI)
    e = math.exp(-abs(x))
    return e / ((1.0 + e) * (1.0 + e))


@njit(cache=True)
def _psi(x, link):
    # f'(x) / f(x)
    if link == PROBIT:
        return -x
    return 1.0 - 2.0 * _cdf(x, link)


@njit(cache=True)
def cell_terms(lo, hi, link):
    """Return ``(p, f(hi)/p, f(lo)/p)`` for ``p = F(hi) - F(lo)``, floored."""
    if link == PROBIT:
        if lo > 0.0:
            p = _cdf(-lo, link) - _cdf(-hi, link)
        else:
            p = _cdf(hi, link) - _cdf(lo, link)
    else:
        # F(hi) F(-lo) (1 - exp(lo - hi)) has no cancellation
        if hi == math.inf:
            p = _cdf(-lo, link)
        elif lo == -math.inf:
            p = _cdf(hi, link)
        else:
            p = _cdf(hi, link) * _cdf(-lo, link) * -math.expm1(lo - hi)
    if not p > P_FLOOR:
        p = P_FLOOR
    ru = 0.0
    rl = 0.0
    if hi != math.inf:
        ru = _pdf(hi, link) / p
    if lo != -math.inf:
        rl = _pdf(lo, link) / p
    return p, ru, rl


@njit(cache=True)
def cell_logprob(lower, upper, eta, link):
    n = eta.shape[0]
    out = np.empty(n)
    for i in range(n):
        p, ru, rl = cell_terms(lower[i] - eta[i], upper[i] - eta[i], link)
        out[i] = math.log(p)
    return out


@njit(cache=True)
def _obs_derivs(lo, hi, link):
    """log p and its first two derivatives in the linear predictor."""
    p, ru, rl = cell_terms(lo, hi, link)
    g = rl - ru
    h = -g * g
    if ru != 0.0:
        h += ru * _psi(hi, link)
    if rl != 0.0:
        h -= rl * _psi(lo, link)
    return math.log(p), g, h


@njit(cache=True)
def _dpsi(x, link):
    if link == PROBIT:
        return -1.0
    return -2.0 * _pdf(x, link)


@njit(cache=True)
def _obs_derivs3(lo, hi, link):
    """Derivatives of log p needed to move the adaptive centre and scale.

    Returns ``(g, h, h3, g_hi, g_lo, h_hi, h_lo)``: first to third
    derivatives in the linear predictor and the partials of ``g`` and ``h``
    in the upper and lower cell bounds.
    """
    p, ru, rl = cell_terms(lo, hi, link)
    ps_h = 0.0
    dps_h = 0.0
    ps_l = 0.0
    dps_l = 0.0
    if ru != 0.0:
        ps_h = _psi(hi, link)
        dps_h = _dpsi(hi, link)
    if rl != 0.0:
        ps_l = _psi(lo, link)
        dps_l = _dpsi(lo, link)
    g = rl - ru
    h = -g * g + ru * ps_h - rl * ps_l
    ru_h = ru * ps_h - ru * ru
    ru_l = ru * rl
    rl_h = -rl * ru
    rl_l = rl * ps_l + rl * rl
    g_hi = rl_h - ru_h
    g_lo = rl_l - ru_l
    h_hi = -2.0 * g * g_hi + ru_h * ps_h + ru * dps_h - rl_h * ps_l
    h_lo = -2.0 * g * g_lo + ru_l * ps_h - rl_l * ps_l - rl * dps_l
    # the linear predictor enters both bounds with a minus sign
    h3 = -(h_hi + h_lo)
    return g, h, h3, g_hi, g_lo, h_hi, h_lo


@njit(cache=True)
def _cond_h(lower, upper, eta, a, b, offset, sigma, z, link):
    """Log integrand ``sum_j log p(eta_j + offset + sigma z) - z^2/2`` and derivatives in z."""
    val = -0.5 * z * z
    d1 = -z
    d2 = -1.0
    shift = offset + sigma * z
    for j in range(a, b):
        e = eta[j] + shift
        lp, g, h = _obs_derivs(lower[j] - e, upper[j] - e, link)
        val += lp
        d1 += sigma * g
        d2 += sigma * sigma * h
    return val, d1, d2


@njit(cache=True)
def _mode_1d(lower, upper, eta, a, b, offset, sigma, z0, link):
    """Damped Newton for the conditional mode; returns ``(mode, curvature)``."""
    z = z0
    val, d1, d2 = _cond_h(lower, upper, eta, a, b, offset, sigma, z, link)
    for _ in range(_NEWTON_MAXIT):
        if d2 >= -1e-12:
            d2 = -1.0
        step = -d1 / d2
        zn = z + step
        vn, d1n, d2n = _cond_h(lower, upper, eta, a, b, offset, sigma, zn, link)
        halvings = 0
        while vn < val - 1e-13 * (1.0 + abs(val)) and halvings < 50:
            step *= 0.5
            zn = z + step
            vn, d1n, d2n = _cond_h(lower, upper, eta, a, b, offset, sigma, zn, link)
            halvings += 1
        z, val, d1, d2 = zn, vn, d1n, d2n
        if abs(step) < _NEWTON_TOL * (1.0 + abs(z)):
            break
    return z, d2


@njit(cache=True)
def _integrate_1d(lower, upper, eta, a, b, offset, sigma, center, scale,
                  nodes, logw_adj, link, want_grad, zbuf, lpbuf, rubuf, rlbuf, gu, gl, ge, gz, ab):
    """log of ``int prod_j p_j(offset + sigma z) phi(z) dz`` on a shifted GH grid.

    With ``want_grad`` the per-observation posterior expectations of
    d log p / d upper, d log p / d lower, d log p / d eta and
    (d log p / d eta) * z are written to ``gu, gl, ge, gz[a:b]``, and
    ``ab`` receives the sensitivities of the result to the grid centre and
    scale (both vanish for an exact rule); ``rubuf``/``rlbuf`` are
    (Q, >= b - a) scratch arrays.
    """
    Q = nodes.shape[0]
    for q in range(Q):
        z = center + _SQRT2 * scale * nodes[q]
        zbuf[q] = z
        shift = offset + sigma * z
        s = logw_adj[q] - 0.5 * z * z
        for j in range(a, b):
            e = eta[j] + shift
            p, ru, rl = cell_terms(lower[j] - e, upper[j] - e, link)
            s += math.log(p)
            rubuf[q, j - a] = ru
            rlbuf[q, j - a] = rl
        lpbuf[q] = s
    m = lpbuf[0]
    for q in range(1, Q):
        if lpbuf[q] > m:
            m = lpbuf[q]
    tot = 0.0
    for q in range(Q):
        lpbuf[q] = math.exp(lpbuf[q] - m)
        tot += lpbuf[q]
    ll = m + math.log(tot) + math.log(_SQRT2 * scale) - _HALF_LOG_2PI
    if want_grad:
        for j in range(a, b):
            gu[j] = 0.0
            gl[j] = 0.0
            ge[j] = 0.0
            gz[j] = 0.0
        d_center = 0.0
        d_scale = 0.0
        for q in range(Q):
            w = lpbuf[q] / tot
            if w == 0.0:
                continue
            z = zbuf[q]
            gsum = 0.0
            for j in range(a, b):
                ru = rubuf[q, j - a]
                rl = rlbuf[q, j - a]
                gu[j] += w * ru
                gl[j] -= w * rl
                ge[j] += w * (rl - ru)
                gz[j] += w * (rl - ru) * z
                gsum += rl - ru
            dlog = sigma * gsum - z
            d_center += w * dlog
            d_scale += w * dlog * (z - center) / scale
        ab[0] = d_center
        ab[1] = d_scale + 1.0 / scale
    return ll


@njit(cache=True)
def _move_grid(lower, upper, eta, a, b, offset, sigma, mu, scale, curv, link, ab, gu, gl, ge, gz):
    """Add the effect of the parameters on the adaptive centre and scale.

    ``mu`` solves F'(mu) = 0 for F(z) = sum_j log p_j(offset + sigma z) - z^2/2
    and ``scale = (-F''(mu))**-0.5``; implicit differentiation gives their
    parameter derivatives, weighted by ``ab`` from :func:`_integrate_1d`.
    The sigma term goes to ``gz[a]``.
    """
    A = ab[0]
    B = ab[1]
    s3 = 0.5 * scale * scale * scale
    sum_g = 0.0
    sum_h = 0.0
    f3 = 0.0
    for j in range(a, b):
        e = eta[j] + offset + sigma * mu
        g, h, h3, g_hi, g_lo, h_hi, h_lo = _obs_derivs3(lower[j] - e, upper[j] - e, link)
        sum_g += g
        sum_h += h
        f3 += sigma * sigma * sigma * h3
    for j in range(a, b):
        e = eta[j] + offset + sigma * mu
        g, h, h3, g_hi, g_lo, h_hi, h_lo = _obs_derivs3(lower[j] - e, upper[j] - e, link)
        dmu = -sigma * g_hi / curv
        gu[j] += A * dmu + B * s3 * (sigma * sigma * h_hi + f3 * dmu)
        dmu = -sigma * g_lo / curv
        gl[j] += A * dmu + B * s3 * (sigma * sigma * h_lo + f3 * dmu)
        dmu = -sigma * h / curv
        ge[j] += A * dmu + B * s3 * (sigma * sigma * h3 + f3 * dmu)
    h3_mu = 0.0
    for j in range(a, b):
        e = eta[j] + offset + sigma * mu
        g, h, h3, g_hi, g_lo, h_hi, h_lo = _obs_derivs3(lower[j] - e, upper[j] - e, link)
        h3_mu += h3
    dmu = -(sum_g + sigma * mu * sum_h) / curv
    gz[a] += A * dmu + B * s3 * (2.0 * sigma * sum_h + sigma * sigma * mu * h3_mu + f3 * dmu)


@njit(cache=True)
def single_level(lower, upper, eta, starts, sigma, nodes, logw_adj, adaptive, link, want_grad):
    """Per-cluster marginal log-likelihoods for one random intercept.

    Returns
    -------
    ll : (C,) array
    grads : (4, n) array
        Rows: E[dlogp/d upper], E[dlogp/d lower], E[dlogp/d eta], E[dlogp/d eta * z].
        Zero unless ``want_grad``.
    """
    C = starts.shape[0] - 1
    n = eta.shape[0]
    Q = nodes.shape[0]
    ll = np.empty(C)
    grads = np.zeros((4, n))
    zbuf = np.empty(Q)
    lpbuf = np.empty(Q)
    maxn = 1
    for c in range(C):
        maxn = max(maxn, starts[c + 1] - starts[c])
    rubuf = np.empty((Q, maxn))
    rlbuf = np.empty((Q, maxn))
    ab = np.zeros(2)
    for c in range(C):
        a = starts[c]
        b = starts[c + 1]
        center = 0.0
        scale = 1.0
        curv = -1.0
        moved = adaptive and sigma > 0.0
        if moved:
            center, curv = _mode_1d(lower, upper, eta, a, b, 0.0, sigma, 0.0, link)
            scale = 1.0 / math.sqrt(-curv)
        ll[c] = _integrate_1d(lower, upper, eta, a, b, 0.0, sigma, center, scale,
                              nodes, logw_adj, link, want_grad, zbuf, lpbuf, rubuf, rlbuf,
                              grads[0], grads[1], grads[2], grads[3], ab)
        if want_grad and moved:
            _move_grid(lower, upper, eta, a, b, 0.0, sigma, center, scale, curv, link, ab,
                       grads[0], grads[1], grads[2], grads[3])
    return ll, grads


@njit(cache=True)
def _joint_h(lower, upper, eta, ear_starts, e0, e1, sb, sc, zb, zc, link, d1c, d2c, dbc):
    """Joint log integrand of one subject in (z_b, z_c[ears]) plus arrow-Hessian pieces."""
    val = -0.5 * zb * zb
    d1b = -zb
    d2b = -1.0
    for e in range(e0, e1):
        k = e - e0
        z = zc[k]
        val -= 0.5 * z * z
        g1 = 0.0
        h1 = 0.0
        shift = sb * zb + sc * z
        for j in range(ear_starts[e], ear_starts[e + 1]):
            x = eta[j] + shift
            lp, g, h = _obs_derivs(lower[j] - x, upper[j] - x, link)
            val += lp
            g1 += g
            h1 += h
        d1b += sb * g1
        d2b += sb * sb * h1
        d1c[k] = sc * g1 - z
        d2c[k] = sc * sc * h1 - 1.0
        dbc[k] = sb * sc * h1
    return val, d1b, d2b


@njit(cache=True)
def _joint_mode(lower, upper, eta, ear_starts, e0, e1, sb, sc, link, zc, d1c, d2c, dbc, zc_new):
    """Newton on the subject's joint log integrand.

    Leaves the mode of the ear effects in ``zc`` and returns
    ``(zb_mode, marginal_precision_of_zb)``.
    """
    E = e1 - e0
    zb = 0.0
    for k in range(E):
        zc[k] = 0.0
    val, d1b, d2b = _joint_h(lower, upper, eta, ear_starts, e0, e1, sb, sc, zb, zc, link, d1c, d2c, dbc)
    for _ in range(_NEWTON_MAXIT):
        # solve N delta = grad for N = -Hessian (arrow structure)
        schur = -d2b
        rhs = d1b
        for k in range(E):
            schur -= dbc[k] * dbc[k] / (-d2c[k])
            rhs -= (-dbc[k]) * d1c[k] / (-d2c[k])
        if schur <= 1e-12:
            schur = 1.0
        step_b = rhs / schur
        t = 1.0
        halvings = 0
        while True:
            zb_new = zb + t * step_b
            for k in range(E):
                step_c = (d1c[k] + dbc[k] * step_b) / (-d2c[k])
                zc_new[k] = zc[k] + t * step_c
            vn, d1bn, d2bn = _joint_h(lower, upper, eta, ear_starts, e0, e1, sb, sc, zb_new, zc_new, link,
                                      d1c, d2c, dbc)
            if vn >= val - 1e-13 * (1.0 + abs(val)) or halvings >= 50:
                break
            # restore derivative buffers at the current point before retrying
            _joint_h(lower, upper, eta, ear_starts, e0, e1, sb, sc, zb, zc, link, d1c, d2c, dbc)
            t *= 0.5
            halvings += 1
        size = abs(t * step_b)
        for k in range(E):
            size = max(size, abs(zc_new[k] - zc[k]))
            zc[k] = zc_new[k]
        zb = zb_new
        val, d1b, d2b = vn, d1bn, d2bn
        if size < _NEWTON_TOL * (1.0 + abs(zb)):
            break
    prec = -d2b
    for k in range(E):
        prec -= dbc[k] * dbc[k] / (-d2c[k])
    if prec <= 1e-12:
        prec = 1.0
    return zb, prec


@njit(cache=True)
def _move_outer(lower, upper, eta, ear_starts, e0, e1, sb, sc, mu_b, zc, scale_b, A, B, link,
                ear_g, ear_h, ear_h3, grads, first):
    """Outer-grid analogue of :func:`_move_grid` for one subject.

    The outer centre is the z_b component of the joint mode of
    J(z_b, z_c) and the outer scale is ``S**-0.5`` for the Schur complement
    ``S = 1 + sum_k sb^2 H_k / (sc^2 H_k - 1)``, ``H_k`` the summed second
    derivative over ear ``k``. Both are differentiated implicitly.
    """
    E = e1 - e0
    S = 1.0
    for k in range(E):
        gk = 0.0
        hk = 0.0
        h3k = 0.0
        for j in range(ear_starts[e0 + k], ear_starts[e0 + k + 1]):
            e = eta[j] + sb * mu_b + sc * zc[k]
            g, h, h3, g_hi, g_lo, h_hi, h_lo = _obs_derivs3(lower[j] - e, upper[j] - e, link)
            gk += g
            hk += h
            h3k += h3
        ear_g[k] = gk
        ear_h[k] = hk
        ear_h3[k] = h3k
        S += sb * sb * hk / (sc * sc * hk - 1.0)
    ds_coef = -0.5 * S ** -1.5

    def dphi_dh(k):
        den = sc * sc * ear_h[k] - 1.0
        return -sb * sb / (den * den)

    # per-observation directions: upper, lower, eta
    for k in range(E):
        n_bc = -sb * sc * ear_h[k]
        n_cc = 1.0 - sc * sc * ear_h[k]
        for j in range(ear_starts[e0 + k], ear_starts[e0 + k + 1]):
            e = eta[j] + sb * mu_b + sc * zc[k]
            g, h, h3, g_hi, g_lo, h_hi, h_lo = _obs_derivs3(lower[j] - e, upper[j] - e, link)
            for row in range(3):
                if row == 0:
                    d = g_hi
                    dd = h_hi
                elif row == 1:
                    d = g_lo
                    dd = h_lo
                else:
                    d = h
                    dd = h3
                r_b = sb * d
                r_c = sc * d
                x_b = (r_b - n_bc * r_c / n_cc) / S
                dS = dphi_dh(k) * dd
                for k2 in range(E):
                    n_bc2 = -sb * sc * ear_h[k2]
                    n_cc2 = 1.0 - sc * sc * ear_h[k2]
                    if k2 == k:
                        x_c = (r_c - n_bc2 * x_b) / n_cc2
                    else:
                        x_c = -n_bc2 * x_b / n_cc2
                    dS += dphi_dh(k2) * ear_h3[k2] * (sb * x_b + sc * x_c)
                grads[row, j] += A * x_b + B * ds_coef * dS

    # sigma_b and sigma_c
    for which in range(2):
        r_b = 0.0
        for k in range(E):
            if which == 0:
                r_b += ear_g[k] + sb * ear_h[k] * mu_b
            else:
                r_b += sb * ear_h[k] * zc[k]
        num = r_b
        for k in range(E):
            n_bc = -sb * sc * ear_h[k]
            n_cc = 1.0 - sc * sc * ear_h[k]
            if which == 0:
                r_c = sc * ear_h[k] * mu_b
            else:
                r_c = ear_g[k] + sc * ear_h[k] * zc[k]
            num -= n_bc * r_c / n_cc
        x_b = num / S
        dS = 0.0
        for k in range(E):
            n_bc = -sb * sc * ear_h[k]
            n_cc = 1.0 - sc * sc * ear_h[k]
            if which == 0:
                r_c = sc * ear_h[k] * mu_b
            else:
                r_c = ear_g[k] + sc * ear_h[k] * zc[k]
            x_c = (r_c - n_bc * x_b) / n_cc
            den = sc * sc * ear_h[k] - 1.0
            explicit = mu_b if which == 0 else zc[k]
            dS += dphi_dh(k) * ear_h3[k] * (sb * x_b + sc * x_c + explicit)
            if which == 0:
                dS += 2.0 * sb * ear_h[k] / den
            else:
                dS += -2.0 * sb * sb * sc * ear_h[k] * ear_h[k] / (den * den)
        grads[3 + which, first] += A * x_b + B * ds_coef * dS


@njit(cache=True)
def nested(lower, upper, eta, subj_starts, ear_starts, sb, sc, nodes, logw_adj, adaptive, link, want_grad):
    """Per-subject marginal log-likelihoods with subject and ear-within-subject intercepts.

    ``subj_starts`` indexes into ``ear_starts`` (ears of subject ``i`` are
    ``subj_starts[i]:subj_starts[i+1]``); ``ear_starts`` indexes observations.

    Returns
    -------
    ll : (S,) array
    grads : (5, n) array
        Rows: E[dlogp/d upper], E[dlogp/d lower], E[dlogp/d eta],
        E[dlogp/d eta * z_b], E[dlogp/d eta * z_c].
    """
    S = subj_starts.shape[0] - 1
    n = eta.shape[0]
    Q = nodes.shape[0]
    ll = np.empty(S)
    grads = np.zeros((5, n))
    max_e = 0
    max_obs = 0
    for i in range(S):
        max_e = max(max_e, subj_starts[i + 1] - subj_starts[i])
        max_obs = max(max_obs, ear_starts[subj_starts[i + 1]] - ear_starts[subj_starts[i]])
    zc = np.zeros(max_e)
    d1c = np.zeros(max_e)
    d2c = np.zeros(max_e)
    dbc = np.zeros(max_e)
    zc_new = np.zeros(max_e)
    max_ear = 1
    for e in range(ear_starts.shape[0] - 1):
        max_ear = max(max_ear, ear_starts[e + 1] - ear_starts[e])
    zbuf = np.empty(Q)
    lpbuf = np.empty(Q)
    rubuf = np.empty((Q, max_ear))
    rlbuf = np.empty((Q, max_ear))
    outer_lp = np.empty(Q)
    outer_z = np.empty(Q)
    ab = np.zeros(2)
    ear_g = np.zeros(max_e)
    ear_h = np.zeros(max_e)
    ear_h3 = np.zeros(max_e)
    # per outer node, per observation inner expectations (local offsets)
    tu = np.zeros((Q, max_obs))
    tl = np.zeros((Q, max_obs))
    te = np.zeros((Q, max_obs))
    tzc = np.zeros((Q, max_obs))
    bu = np.zeros(n)
    bl = np.zeros(n)
    be = np.zeros(n)
    bz = np.zeros(n)
    for i in range(S):
        e0 = subj_starts[i]
        e1 = subj_starts[i + 1]
        o0 = ear_starts[e0]
        o1 = ear_starts[e1]
        E = e1 - e0
        mu_b = 0.0
        scale_b = 1.0
        if adaptive and (sb > 0.0 or sc > 0.0):
            mu_b, prec = _joint_mode(lower, upper, eta, ear_starts, e0, e1, sb, sc, link,
                                     zc, d1c, d2c, dbc, zc_new)
            scale_b = 1.0 / math.sqrt(prec)
        else:
            for k in range(E):
                zc[k] = 0.0
                dbc[k] = 0.0
                d2c[k] = -1.0
        for q in range(Q):
            zb = mu_b + _SQRT2 * scale_b * nodes[q]
            outer_z[q] = zb
            s = logw_adj[q] - 0.5 * zb * zb
            for e in range(e0, e1):
                k = e - e0
                a = ear_starts[e]
                b = ear_starts[e + 1]
                center = 0.0
                scale = 1.0
                curv = -1.0
                if adaptive and sc > 0.0:
                    start = zc[k] - (dbc[k] / d2c[k]) * (zb - mu_b)
                    center, curv = _mode_1d(lower, upper, eta, a, b, sb * zb, sc, start, link)
                    scale = 1.0 / math.sqrt(-curv)
                s += _integrate_1d(lower, upper, eta, a, b, sb * zb, sc, center, scale,
                                   nodes, logw_adj, link, want_grad, zbuf, lpbuf, rubuf, rlbuf,
                                   bu, bl, be, bz, ab)
                if want_grad and adaptive and sc > 0.0:
                    _move_grid(lower, upper, eta, a, b, sb * zb, sc, center, scale, curv, link, ab,
                               bu, bl, be, bz)
            if want_grad:
                for j in range(o0, o1):
                    tu[q, j - o0] = bu[j]
                    tl[q, j - o0] = bl[j]
                    te[q, j - o0] = be[j]
                    tzc[q, j - o0] = bz[j]
            outer_lp[q] = s
        m = outer_lp[0]
        for q in range(1, Q):
            if outer_lp[q] > m:
                m = outer_lp[q]
        tot = 0.0
        for q in range(Q):
            outer_lp[q] = math.exp(outer_lp[q] - m)
            tot += outer_lp[q]
        ll[i] = m + math.log(tot) + math.log(_SQRT2 * scale_b) - _HALF_LOG_2PI
        if want_grad:
            d_center = 0.0
            d_scale = 0.0
            for q in range(Q):
                w = outer_lp[q] / tot
                if w == 0.0:
                    continue
                zb = outer_z[q]
                dlog = -zb
                for j in range(o0, o1):
                    r = j - o0
                    grads[0, j] += w * tu[q, r]
                    grads[1, j] += w * tl[q, r]
                    grads[2, j] += w * te[q, r]
                    grads[3, j] += w * te[q, r] * zb
                    grads[4, j] += w * tzc[q, r]
                    dlog += sb * te[q, r]
                d_center += w * dlog
                d_scale += w * dlog * (zb - mu_b) / scale_b
            if adaptive and (sb > 0.0 or sc > 0.0):
                _move_outer(lower, upper, eta, ear_starts, e0, e1, sb, sc, mu_b, zc, scale_b,
                            d_center, d_scale + 1.0 / scale_b, link, ear_g, ear_h, ear_h3, grads, o0)
    return ll, grads
