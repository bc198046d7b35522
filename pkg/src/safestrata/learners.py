"""Estimators for the alternative parameters fed into each block's e-variable.

Estimates may depend on past data in any way without affecting validity, so
the choices here only matter for power.  All estimators return points strictly
inside the unit square.

Counts are carried as an array of shape ``(K, 2, 2)`` indexed by
``[stratum, group, outcome]`` with group 0 = a, 1 = b and outcome 0 = success,
1 = failure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels as K
from .errors import NumericUnderflow
from .model import ThetaPair

QUADRATURE_NODES = 1001
CONTINUITY = 0.5


@dataclass(frozen=True)
class BetaPrior:
    alpha: float = 0.18
    beta: float = 0.18

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"beta prior needs positive parameters, got {self}")


DEFAULT_PRIOR = BetaPrior()


@dataclass(frozen=True)
class GroupCounts:
    successes: int = 0
    failures: int = 0

    def __post_init__(self):
        if self.successes < 0 or self.failures < 0:
            raise ValueError(f"negative counts: {self}")

    @property
    def total(self) -> int:
        return self.successes + self.failures


class CrossTalkMode(Enum):
    NONE = "none"
    ODDS = "odds"
    CONTROL_RATE = "control-rate"
    RISK_DIFF = "risk-diff"
    MIX = "mix"

    @classmethod
    def parse(cls, value) -> CrossTalkMode:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ValueError(f"unknown cross-talk mode {value!r}")


# the modes a MIX e-process averages over
MIX_COMPONENTS = (CrossTalkMode.NONE, CrossTalkMode.ODDS, CrossTalkMode.CONTROL_RATE)


def posterior_mean(counts: GroupCounts, prior: BetaPrior = DEFAULT_PRIOR) -> float:
    return (counts.successes + prior.alpha) / (counts.total + prior.alpha + prior.beta)


def odds_ratio(theta: ThetaPair) -> float:
    ta, tb = theta
    return (tb / (1.0 - tb)) * ((1.0 - ta) / ta)


def or_curve(theta_a: float, phi: float) -> float:
    """theta_b such that OR(theta_a, theta_b) = phi."""
    return phi * theta_a / (1.0 - theta_a + phi * theta_a)


def _curve_mean(sa, fa, sb, fb, param, kind, prior, n_nodes):
    m = K.curve_posterior_mean(float(sa), float(fa), float(sb), float(fb), float(param),
                               kind, prior.alpha, prior.beta, n_nodes)
    if math.isnan(m):
        raise NumericUnderflow("restricted posterior integrand underflowed everywhere")
    return m


def posterior_mean_or_restricted(counts_a: GroupCounts, counts_b: GroupCounts, phi: float,
                                 prior: BetaPrior = DEFAULT_PRIOR,
                                 n_nodes: int = QUADRATURE_NODES) -> ThetaPair:
    """Posterior mean along the curve of constant odds ratio ``phi``.

    The curve is parametrised by theta_a with a beta prior on theta_a.  The
    posterior mean of theta_a is computed by composite Simpson quadrature and
    mapped back through the curve, so the returned pair has odds ratio ``phi``.
    """
    if not phi > 0:
        raise ValueError(f"odds ratio must be positive, got {phi}")
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ValueError("Simpson quadrature needs an odd number of nodes >= 3")
    ta = _curve_mean(counts_a.successes, counts_a.failures, counts_b.successes,
                     counts_b.failures, phi, 0, prior, n_nodes)
    return ThetaPair(ta, or_curve(ta, phi))


def posterior_mean_rd_restricted(counts_a: GroupCounts, counts_b: GroupCounts, delta: float,
                                 prior: BetaPrior = DEFAULT_PRIOR,
                                 n_nodes: int = QUADRATURE_NODES) -> ThetaPair:
    """Posterior mean along the segment theta_b = theta_a + delta."""
    if not -1.0 < delta < 1.0:
        raise ValueError(f"risk difference must lie in (-1, 1), got {delta}")
    ta = _curve_mean(counts_a.successes, counts_a.failures, counts_b.successes,
                     counts_b.failures, delta, 1, prior, n_nodes)
    return ThetaPair(ta, ta + delta)


def _pooled(counts_by_stratum) -> tuple[float, float, float, float]:
    arr = as_count_array(counts_by_stratum)
    tot = arr.sum(axis=0)
    return tot[0, 0], tot[0, 1], tot[1, 0], tot[1, 1]


def pooled_or_mle(counts_by_stratum) -> float:
    """Odds ratio of the strata-ignoring 2x2 table, with 0.5 added to every cell."""
    sa, fa, sb, fb = _pooled(counts_by_stratum)
    c = CONTINUITY
    return ((sb + c) * (fa + c)) / ((fb + c) * (sa + c))


def pooled_rd(counts_by_stratum) -> float:
    """Risk difference of the strata-ignoring table, with 0.5 added to every cell."""
    sa, fa, sb, fb = _pooled(counts_by_stratum)
    c = CONTINUITY
    return (sb + c) / (sb + fb + 2 * c) - (sa + c) / (sa + fa + 2 * c)


def as_count_array(state) -> np.ndarray:
    """Coerce per-stratum ``(GroupCounts, GroupCounts)`` pairs into a (K, 2, 2) array."""
    if isinstance(state, np.ndarray):
        arr = state
    else:
        rows = []
        for pair in state:
            row = []
            for g in pair:
                if isinstance(g, GroupCounts):
                    row.append((g.successes, g.failures))
                else:
                    row.append(tuple(g))
            rows.append(row)
        arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[1:] != (2, 2):
        raise ValueError(f"count state must have shape (K, 2, 2), got {arr.shape}")
    return arr


def estimate(counts: np.ndarray, mode: CrossTalkMode, stratum: int,
             prior: BetaPrior = DEFAULT_PRIOR) -> tuple[float, float]:
    """Fast path of :func:`alternative_estimates` on a (K, 2, 2) float array."""
    a = counts[stratum, 0]
    b = counts[stratum, 1]
    s = prior.alpha + prior.beta
    if mode is CrossTalkMode.NONE:
        return (a[0] + prior.alpha) / (a[0] + a[1] + s), (b[0] + prior.alpha) / (b[0] + b[1] + s)
    if mode is CrossTalkMode.CONTROL_RATE:
        tot = counts[:, 0].sum(axis=0)
        return ((tot[0] + prior.alpha) / (tot[0] + tot[1] + s),
                (b[0] + prior.alpha) / (b[0] + b[1] + s))
    if mode is CrossTalkMode.ODDS:
        phi = pooled_or_mle(counts)
        ta = _curve_mean(a[0], a[1], b[0], b[1], phi, 0, prior, QUADRATURE_NODES)
        return ta, or_curve(ta, phi)
    if mode is CrossTalkMode.RISK_DIFF:
        d = pooled_rd(counts)
        ta = _curve_mean(a[0], a[1], b[0], b[1], d, 1, prior, QUADRATURE_NODES)
        return ta, ta + d
    raise ValueError(f"{mode} mixes e-processes and has no single estimate")


def alternative_estimates(state, mode, stratum: int,
                          prior: BetaPrior = DEFAULT_PRIOR) -> ThetaPair:
    """Alternative parameters for ``stratum`` given all data seen so far.

    NONE uses only the stratum's own counts.  CONTROL_RATE shares the group-a
    rate across strata by pooling group-a counts.  ODDS (RISK_DIFF) restricts the
    stratum's posterior to the pooled odds ratio (risk difference).
    """
    counts = as_count_array(state)
    if not 0 <= stratum < counts.shape[0]:
        raise IndexError(f"stratum {stratum} out of range for {counts.shape[0]} strata")
    ta, tb = estimate(counts, CrossTalkMode.parse(mode), stratum, prior)
    return ThetaPair(ta, tb)
