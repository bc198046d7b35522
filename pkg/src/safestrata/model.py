"""Bernoulli block distributions, their KL divergence and KL projections.

A block holds ``n_a`` outcomes of group a and ``n_b`` outcomes of group b from
one stratum.  Because outcomes within a group are exchangeable, the success
counts ``(s_a, s_b)`` are sufficient and all likelihoods below use them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels as K
from .errors import BoundaryLikelihoodZero, InfiniteDivergence


@dataclass(frozen=True)
class BlockDesign:
    n_a: int = 1
    n_b: int = 1

    def __post_init__(self):
        if int(self.n_a) != self.n_a or int(self.n_b) != self.n_b:
            raise ValueError("block sizes must be integers")
        if self.n_a < 1 or self.n_b < 1:
            raise ValueError(f"block sizes must be >= 1, got ({self.n_a}, {self.n_b})")

    @property
    def n(self) -> int:
        return self.n_a + self.n_b

    def swapped(self) -> BlockDesign:
        return BlockDesign(self.n_b, self.n_a)


@dataclass(frozen=True)
class ThetaPair:
    theta_a: float
    theta_b: float

    def __post_init__(self):
        for name in ("theta_a", "theta_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def risk_difference(self) -> float:
        return self.theta_b - self.theta_a

    def __iter__(self):
        yield self.theta_a
        yield self.theta_b


@dataclass(frozen=True)
class BlockCounts:
    s_a: int
    s_b: int
    design: BlockDesign = BlockDesign()

    def __post_init__(self):
        if not 0 <= self.s_a <= self.design.n_a:
            raise ValueError(f"s_a={self.s_a} outside 0..{self.design.n_a}")
        if not 0 <= self.s_b <= self.design.n_b:
            raise ValueError(f"s_b={self.s_b} outside 0..{self.design.n_b}")


class Side(Enum):
    EQ = K.SIDE_EQ
    GE = K.SIDE_GE
    LE = K.SIDE_LE


def _log_bernoulli(theta: float, successes: int, trials: int) -> float:
    failures = trials - successes
    if theta == 0.0:
        if successes > 0:
            raise BoundaryLikelihoodZero(f"theta=0 but {successes} successes observed")
        return 0.0
    if theta == 1.0:
        if failures > 0:
            raise BoundaryLikelihoodZero(f"theta=1 but {failures} failures observed")
        return 0.0
    return successes * math.log(theta) + failures * math.log1p(-theta)


def block_log_lik(theta: ThetaPair, counts: BlockCounts) -> float:
    """Log-probability of the block counts under independent Bernoulli groups."""
    d = counts.design
    return (_log_bernoulli(theta.theta_a, counts.s_a, d.n_a)
            + _log_bernoulli(theta.theta_b, counts.s_b, d.n_b))


def kl_bernoulli(p: float, q: float) -> float:
    """KL(Bern(p) || Bern(q)), raising if q is degenerate where p has mass."""
    if (q == 0.0 and p > 0.0) or (q == 1.0 and p < 1.0):
        raise InfiniteDivergence(f"KL(Bern({p}) || Bern({q})) is infinite")
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def kl_block(p: ThetaPair, q: ThetaPair, design: BlockDesign) -> float:
    """KL divergence between two block distributions."""
    return (design.n_a * kl_bernoulli(p.theta_a, q.theta_a)
            + design.n_b * kl_bernoulli(p.theta_b, q.theta_b))


def project_global_null(theta: ThetaPair, design: BlockDesign) -> float:
    """Common rate theta0 minimising KL(P_theta || P_{theta0, theta0})."""
    return (design.n_a * theta.theta_a + design.n_b * theta.theta_b) / design.n


def _clamped(theta: ThetaPair) -> tuple[float, float]:
    return K.clamp(theta.theta_a), K.clamp(theta.theta_b)


def project_rd_line(theta: ThetaPair, delta: float, design: BlockDesign) -> ThetaPair:
    """KL projection onto the segment {theta_b - theta_a = delta} of the unit square.

    Solved by a bracketed Newton iteration on the (convex) objective's derivative
    in theta_a.  Inputs on the boundary of the square are first pulled in by
    1e-12, and so is the returned point.
    """
    if not -1.0 <= delta <= 1.0:
        raise ValueError(f"delta={delta} outside [-1, 1]")
    pa, pb = _clamped(theta)
    if abs((theta.theta_b - theta.theta_a) - delta) <= 1e-15:
        return theta
    qa, qb = K.project_rd(pa, pb, float(delta), K.SIDE_EQ, design.n_a, design.n_b)
    return ThetaPair(qa, qb)


def project_halfplane(theta: ThetaPair, delta: float, side: Side | str,
                      design: BlockDesign) -> ThetaPair:
    """KL projection onto {theta_b - theta_a >= delta} (GE) or {<= delta} (LE).

    Points already inside are returned unchanged; otherwise the minimiser lies on
    the boundary line because the objective is convex with its minimum at theta.
    """
    side = Side[side.upper()] if isinstance(side, str) else side
    if side is Side.EQ:
        return project_rd_line(theta, delta, design)
    diff = theta.theta_b - theta.theta_a
    if (side is Side.GE and diff >= delta) or (side is Side.LE and diff <= delta):
        return theta
    return project_rd_line(theta, delta, design)


def project_rd_many(theta: ThetaPair, deltas, side: Side, design: BlockDesign
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection onto a family of risk-difference nulls."""
    deltas = np.asarray(deltas, dtype=float)
    pa, pb = _clamped(theta)
    qa = np.empty_like(deltas)
    qb = np.empty_like(deltas)
    for i, d in enumerate(deltas):
        qa[i], qb[i] = K.project_rd(pa, pb, float(d), side.value, design.n_a, design.n_b)
    return qa, qb
