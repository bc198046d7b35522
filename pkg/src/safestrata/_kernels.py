"""Compiled inner loops shared by the projection, learner and e-process code.

Everything here works on plain floats and 1-d float arrays so it can be
jitted in nopython mode.  Public wrappers with validation live in
:mod:`safestrata.model` and :mod:`safestrata.learners`.
"""
import math

import numba
import numpy as np

EPS = 1e-12
NEWTON_TOL = 1e-14

SIDE_EQ = 0
SIDE_GE = 1
SIDE_LE = 2


@numba.njit(cache=True)
def xlogy_ratio(p, q):
    # p * log(p / q) with the 0 * log 0 = 0 convention
    if p == 0.0:
        return 0.0
    return p * math.log(p / q)


@numba.njit(cache=True)
def kl_bernoulli(p, q):
    return xlogy_ratio(p, q) + xlogy_ratio(1.0 - p, 1.0 - q)


@numba.njit(cache=True)
def rd_objective(x, pa, pb, delta, na, nb):
    return na * kl_bernoulli(pa, x) + nb * kl_bernoulli(pb, x + delta)


@numba.njit(cache=True)
def _rd_slope(x, pa, pb, delta, na, nb):
    # rounding can put y on an end even when x is inside; use the limiting slope there
    y = x + delta
    if x <= 0.0 or y <= 0.0:
        return -math.inf
    if x >= 1.0 or y >= 1.0:
        return math.inf
    return na * (x - pa) / (x * (1.0 - x)) + nb * (y - pb) / (y * (1.0 - y))


@numba.njit(cache=True)
def rd_line_argmin(pa, pb, delta, na, nb):
    """Minimise the block KL from (pa, pb) over the segment theta_b - theta_a = delta.

    Returns the theta_a coordinate.  The objective is strictly convex in theta_a
    and its derivative runs from -inf to +inf across the open segment, so a
    Newton iteration kept inside a shrinking bracket always converges.
    """
    lo = max(0.0, -delta)
    hi = min(1.0, 1.0 - delta)
    if hi - lo <= 2.0 * EPS:
        return 0.5 * (lo + hi)
    x = (na * pa + nb * (pb - delta)) / (na + nb)
    # a start hugging an end makes Newton crawl in steps of its own size
    margin = 1e-3 * (hi - lo)
    if x <= lo + margin or x >= hi - margin:
        x = 0.5 * (lo + hi)
    a = lo
    b = hi
    for _ in range(200):
        g1 = _rd_slope(x, pa, pb, delta, na, nb)
        if g1 == 0.0:
            return x
        if g1 > 0.0:
            b = x
        else:
            a = x
        if math.isinf(g1):
            x_new = 0.5 * (a + b)
        else:
            y = x + delta
            g2 = (na * (pa / (x * x) + (1.0 - pa) / ((1.0 - x) * (1.0 - x)))
                  + nb * (pb / (y * y) + (1.0 - pb) / ((1.0 - y) * (1.0 - y))))
            x_new = x - g1 / g2
            if not (a < x_new < b):
                x_new = 0.5 * (a + b)
        if b - a <= NEWTON_TOL:
            return x_new
        step = x_new - x
        if abs(step) <= NEWTON_TOL:
            # accept only if the slope changes sign just past the step
            probe = x_new + (NEWTON_TOL if step > 0 else -NEWTON_TOL)
            if not (a < probe < b):
                return x_new
            if (_rd_slope(probe, pa, pb, delta, na, nb) > 0.0) == (g1 < 0.0):
                return x_new
        x = x_new
    return x


@numba.njit(cache=True)
def clamp(x):
    if x < EPS:
        return EPS
    if x > 1.0 - EPS:
        return 1.0 - EPS
    return x


@numba.njit(cache=True)
def project_rd(pa, pb, delta, side, na, nb):
    """KL projection of (pa, pb) onto {theta_b - theta_a (=, >=, <=) delta}."""
    diff = pb - pa
    if side == SIDE_GE and diff >= delta:
        return pa, pb
    if side == SIDE_LE and diff <= delta:
        return pa, pb
    x = rd_line_argmin(pa, pb, delta, na, nb)
    return clamp(x), clamp(x + delta)


@numba.njit(cache=True)
def bernoulli_block_loglik(ta, tb, sa, sb, na, nb):
    return (sa * math.log(ta) + (na - sa) * math.log(1.0 - ta)
            + sb * math.log(tb) + (nb - sb) * math.log(1.0 - tb))


@numba.njit(cache=True)
def log_s_global(pa, pb, sa, sb, na, nb):
    t0 = (na * pa + nb * pb) / (na + nb)
    return (bernoulli_block_loglik(pa, pb, sa, sb, na, nb)
            - bernoulli_block_loglik(t0, t0, sa, sb, na, nb))


@numba.njit(cache=True)
def log_s_rd_many(pa, pb, sa, sb, na, nb, deltas, side, out):
    """Per-delta log e-value of one block against a family of risk-difference nulls."""
    alt = bernoulli_block_loglik(pa, pb, sa, sb, na, nb)
    for i in range(deltas.shape[0]):
        qa, qb = project_rd(pa, pb, deltas[i], side, na, nb)
        out[i] = alt - bernoulli_block_loglik(qa, qb, sa, sb, na, nb)


@numba.njit(cache=True)
def log_e_rd_history(theta_a, theta_b, sa, sb, na, nb, deltas, side):
    """Sum of per-block log e-values over a stored estimate/count history."""
    out = np.zeros(deltas.shape[0])
    tmp = np.empty(deltas.shape[0])
    for j in range(theta_a.shape[0]):
        log_s_rd_many(theta_a[j], theta_b[j], sa[j], sb[j], na, nb, deltas, side, tmp)
        for i in range(deltas.shape[0]):
            out[i] += tmp[i]
    return out


@numba.njit(cache=True)
def simpson_weights(n):
    w = np.empty(n)
    for i in range(n):
        if i == 0 or i == n - 1:
            w[i] = 1.0
        elif i % 2 == 1:
            w[i] = 4.0
        else:
            w[i] = 2.0
    return w


@numba.njit(cache=True)
def curve_posterior_mean(sa, fa, sb, fb, param, kind, alpha, beta, n_nodes):
    """Posterior mean of theta_a along a one-dimensional curve in the unit square.

    kind 0: constant odds ratio, theta_b = param*x / (1 - x + param*x).
    kind 1: constant risk difference, theta_b = x + param.
    Beta(alpha, beta) prior on theta_a; composite Simpson in log space.
    Returns NaN when the integrand underflows everywhere.
    """
    if kind == 0:
        lo = 1e-6
        hi = 1.0 - 1e-6
    else:
        lo = max(0.0, -param) + 1e-6
        hi = min(1.0, 1.0 - param) - 1e-6
    w = simpson_weights(n_nodes)
    logf = np.empty(n_nodes)
    xs = np.empty(n_nodes)
    top = -np.inf
    for i in range(n_nodes):
        x = lo + (hi - lo) * i / (n_nodes - 1)
        if kind == 0:
            den = 1.0 - x + param * x
            y = param * x / den
            one_minus_y = (1.0 - x) / den
        else:
            y = x + param
            one_minus_y = 1.0 - y
        v = ((alpha - 1.0 + sa) * math.log(x) + (beta - 1.0 + fa) * math.log(1.0 - x)
             + sb * math.log(y) + fb * math.log(one_minus_y))
        xs[i] = x
        logf[i] = v
        if v > top:
            top = v
    if not math.isfinite(top):
        return np.nan
    num = 0.0
    den_sum = 0.0
    for i in range(n_nodes):
        f = w[i] * math.exp(logf[i] - top)
        num += f * xs[i]
        den_sum += f
    if den_sum <= 0.0:
        return np.nan
    return num / den_sum
