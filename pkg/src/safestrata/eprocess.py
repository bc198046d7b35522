"""Per-stratum conditional e-variables, combination across strata, and the global test.

Time is measured in blocks.  A stratum's e-variable for a block from another
stratum is 1 (it "sleeps"), so per-stratum histories are stored on the common
block clock with zeros in log space where a stratum sleeps.

Combined processes are returned as arrays of length ``M + 1`` whose entry
``m`` is log E after ``m`` blocks (entry 0 is log 1 = 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K
from .errors import MisalignedHistories
from .ingest import Block, BlockStream, as_stream
from .learners import (DEFAULT_PRIOR, MIX_COMPONENTS, BetaPrior, CrossTalkMode, GroupCounts,
                       estimate)
from .model import BlockCounts, BlockDesign, Side, ThetaPair, block_log_lik

# -- nulls -------------------------------------------------------------------


@dataclass(frozen=True)
class NullSpec:
    """GLOBAL (theta_a = theta_b) or a risk-difference null RD_EQ/GE/LE(delta)."""

    kind: str = "global"
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("global", "eq", "ge", "le"):
            raise ValueError(f"unknown null kind {self.kind!r}")
        if not -1.0 <= self.delta <= 1.0:
            raise ValueError(f"delta={self.delta} outside [-1, 1]")

    @classmethod
    def rd_eq(cls, delta): return cls("eq", delta)

    @classmethod
    def rd_ge(cls, delta): return cls("ge", delta)

    @classmethod
    def rd_le(cls, delta): return cls("le", delta)

    @property
    def side(self) -> Side:
        return {"eq": Side.EQ, "ge": Side.GE, "le": Side.LE}[self.kind]


GLOBAL = NullSpec()


def project_onto_null(theta: ThetaPair, null: NullSpec, design: BlockDesign) -> ThetaPair:
    if null.kind == "global":
        t0 = (design.n_a * theta.theta_a + design.n_b * theta.theta_b) / design.n
        return ThetaPair(t0, t0)
    pa, pb = K.clamp(theta.theta_a), K.clamp(theta.theta_b)
    qa, qb = K.project_rd(pa, pb, float(null.delta), null.side.value, design.n_a, design.n_b)
    return ThetaPair(qa, qb)


def conditional_evalue(theta_alt: ThetaPair, null: NullSpec, counts: BlockCounts) -> float:
    """Log of the block e-variable: alternative likelihood over its KL projection's."""
    theta_null = project_onto_null(theta_alt, null, counts.design)
    return block_log_lik(theta_alt, counts) - block_log_lik(theta_null, counts)


# -- single-stratum state ------------------------------------------------------


@dataclass(frozen=True)
class StratumState:
    counts_a: GroupCounts = GroupCounts()
    counts_b: GroupCounts = GroupCounts()
    log_e: float = 0.0
    blocks_seen: int = 0


def _state_array(states: Sequence[StratumState]) -> np.ndarray:
    return np.array([[(s.counts_a.successes, s.counts_a.failures),
                      (s.counts_b.successes, s.counts_b.failures)] for s in states], dtype=float)


def stratum_step(states: Sequence[StratumState], block: Block, mode=CrossTalkMode.NONE,
                 null: NullSpec = GLOBAL, prior: BetaPrior = DEFAULT_PRIOR
                 ) -> tuple[list[StratumState], float]:
    """Advance the block's stratum by one block; all other strata sleep.

    The alternative is estimated from data strictly before the block, then the
    block's counts are added.  Returns the new state list and the step's log S.
    """
    mode = CrossTalkMode.parse(mode)
    if mode is CrossTalkMode.MIX:
        raise ValueError("MIX combines whole e-processes; use crosstalk_mix")
    k = block.stratum
    if not 0 <= k < len(states):
        raise IndexError(f"block stratum {k} has no state")
    ta, tb = estimate(_state_array(states), mode, k, prior)
    log_s = conditional_evalue(ThetaPair(ta, tb), null, block.counts)
    d = block.counts.design
    old = states[k]
    new = StratumState(
        GroupCounts(old.counts_a.successes + block.counts.s_a,
                    old.counts_a.failures + d.n_a - block.counts.s_a),
        GroupCounts(old.counts_b.successes + block.counts.s_b,
                    old.counts_b.failures + d.n_b - block.counts.s_b),
        old.log_e + log_s, old.blocks_seen + 1)
    out = list(states)
    out[k] = new
    return out, log_s


# -- vectorised sequential engine ------------------------------------------------


@dataclass
class BlockTrace:
    """Per-block output of one cross-talk mode over a stream.

    ``log_s[j, i]`` is the log e-value of block ``j`` (for its own stratum)
    against the ``i``-th null of the family; ``theta`` holds the alternative
    estimates used for block ``j``.
    """

    stream: BlockStream
    mode: CrossTalkMode
    family: str
    deltas: np.ndarray
    log_s: np.ndarray
    theta: np.ndarray

    def histories(self) -> np.ndarray:
        """Per-stratum log S on the block clock, shape (K, M, G), zeros while asleep."""
        m, g = self.log_s.shape
        out = np.zeros((self.stream.n_strata, m, g))
        out[self.stream.strata, np.arange(m)] = self.log_s
        return out


def run_blocks(blocks, mode=CrossTalkMode.NONE, family: str = "global", deltas=None,
               prior: BetaPrior = DEFAULT_PRIOR, n_strata: int | None = None) -> BlockTrace:
    """Compute every block's e-value against a null family, for one cross-talk mode.

    ``family`` is ``"global"`` (a single column) or one of ``"eq"``, ``"ge"``,
    ``"le"`` with one column per entry of ``deltas``.  Estimates use only blocks
    strictly before the current one; the estimate does not depend on delta, so
    it is computed once per block.
    """
    stream = as_stream(blocks, n_strata=n_strata)
    mode = CrossTalkMode.parse(mode)
    if mode is CrossTalkMode.MIX:
        raise ValueError("MIX is formed from component traces; see crosstalk_mix")
    if family == "global":
        deltas = np.zeros(1)
    else:
        side = {"eq": K.SIDE_EQ, "ge": K.SIDE_GE, "le": K.SIDE_LE}[family]
        deltas = np.ascontiguousarray(deltas, dtype=float)
    na, nb = stream.design.n_a, stream.design.n_b
    m = len(stream)
    log_s = np.zeros((m, len(deltas)))
    theta = np.zeros((m, 2))
    counts = np.zeros((stream.n_strata, 2, 2))
    for j in range(m):
        k = stream.strata[j]
        sa = float(stream.s_a[j])
        sb = float(stream.s_b[j])
        ta, tb = estimate(counts, mode, k, prior)
        theta[j] = ta, tb
        if family == "global":
            log_s[j, 0] = K.log_s_global(ta, tb, sa, sb, na, nb)
        else:
            K.log_s_rd_many(ta, tb, sa, sb, na, nb, deltas, side, log_s[j])
        counts[k, 0, 0] += sa
        counts[k, 0, 1] += na - sa
        counts[k, 1, 0] += sb
        counts[k, 1, 1] += nb - sb
    return BlockTrace(stream, mode, family, deltas, log_s, theta)


# -- combining strata -------------------------------------------------------------


@dataclass(frozen=True)
class CombinerSpec:
    """How per-stratum e-processes are merged into one.

    kind: ``multiply``, ``mixture``, ``pseudo-bayes``, ``switch`` or ``min``.
    ``weights`` is the prior over strata (uniform when None); ``eta`` the
    pseudo-Bayes learning rate.  A switch uses either a fixed ``switch_at`` or
    a uniform prior over ``switch_range = (lo, hi)`` (inclusive, block clock);
    with neither given the range defaults to ``(5, M - 5)``.
    """

    kind: str = "multiply"
    weights: tuple | None = None
    eta: float = 1.0
    switch_at: int | None = None
    switch_range: tuple | None = None

    def __post_init__(self):
        kind = self.kind.lower().replace("_", "-")
        if kind == "pseudobayes":
            kind = "pseudo-bayes"
        object.__setattr__(self, "kind", kind)
        if kind not in ("multiply", "mixture", "pseudo-bayes", "switch", "min"):
            raise ValueError(f"unknown combiner {self.kind!r}")
        if not self.eta > 0:
            raise ValueError("learning rate eta must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
                raise ValueError(f"prior weights must be nonnegative and sum to 1, got {w.tolist()}")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))
        if self.switch_at is not None and self.switch_at < 1:
            raise ValueError("switch time must be >= 1")
        if self.switch_range is not None:
            lo, hi = self.switch_range
            if lo < 1 or hi < lo:
                raise ValueError(f"bad switch range {self.switch_range}")
            object.__setattr__(self, "switch_range", (int(lo), int(hi)))

    @property
    def label(self) -> str:
        if self.kind == "pseudo-bayes":
            return f"pseudo-bayes(eta={self.eta:g})"
        if self.kind == "switch":
            if self.switch_at is not None:
                return f"switch(at={self.switch_at})"
            if self.switch_range is not None:
                return "switch(uniform:{}:{})".format(*self.switch_range)
            return "switch(uniform)"
        return self.kind


def _log_prior(spec: CombinerSpec, k: int, ndim: int) -> np.ndarray:
    if spec.weights is None:
        w = np.full(k, 1.0 / k)
    else:
        if len(spec.weights) != k:
            raise MisalignedHistories(f"{len(spec.weights)} prior weights for {k} strata")
        w = np.asarray(spec.weights)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    return lw.reshape((k,) + (1,) * (ndim - 1))


def _prepend_zero(x: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros((1,) + x.shape[1:]), x], axis=0)


def pseudo_bayes_weights(log_e_prev, weights=None, eta: float = 1.0) -> np.ndarray:
    """Pseudo-posterior over strata: prior times past e-value to the power eta."""
    log_e_prev = np.asarray(log_e_prev, dtype=float)
    k = log_e_prev.shape[0]
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore"):
        lw = np.log(w) + eta * log_e_prev
    return np.exp(lw - logsumexp(lw))


def _mixture(log_s, lp):
    return _prepend_zero(np.cumsum(logsumexp(lp + log_s, axis=0), axis=0))


def _switched(mix, cum, j_star):
    """E_[j*]: the mixture up to j*, then the stratum leading at j* alone."""
    m = mix.shape[0] - 1
    if j_star >= m:
        return mix
    lead = np.argmax(cum[:, j_star], axis=0)
    follow = np.take_along_axis(cum, lead[None, None], axis=0)[0]
    out = mix.copy()
    out[j_star + 1:] = mix[j_star] + (follow[j_star + 1:] - follow[j_star])
    return out


def combine(spec: CombinerSpec, histories) -> np.ndarray:
    """Merge per-stratum log S histories of shape (K, M, ...) into log E of shape (M+1, ...)."""
    if isinstance(histories, (list, tuple)):
        lengths = {len(h) for h in histories}
        if len(lengths) > 1:
            raise MisalignedHistories(f"stratum histories have lengths {sorted(lengths)}")
    log_s = np.asarray(histories, dtype=float)
    if log_s.ndim < 2:
        raise MisalignedHistories("histories need shape (K, M, ...)")
    k, m = log_s.shape[:2]
    cum = np.concatenate([np.zeros((k, 1) + log_s.shape[2:]), np.cumsum(log_s, axis=1)], axis=1)
    if spec.kind == "multiply":
        return cum.sum(axis=0)
    if spec.kind == "min":
        return cum.min(axis=0)
    lp = _log_prior(spec, k, log_s.ndim)
    if spec.kind == "mixture":
        return _mixture(log_s, lp)
    if spec.kind == "pseudo-bayes":
        lw = lp + spec.eta * cum[:, :-1]
        lw = lw - logsumexp(lw, axis=0, keepdims=True)
        return _prepend_zero(np.cumsum(logsumexp(lw + log_s, axis=0), axis=0))
    # switch
    mix = _mixture(log_s, lp)
    if spec.switch_at is not None:
        return _switched(mix, cum, spec.switch_at)
    lo, hi = spec.switch_range if spec.switch_range is not None else (5, m - 5)
    if hi < lo:
        return mix
    parts = [_switched(mix, cum, j) for j in range(lo, hi + 1)]
    return logsumexp(np.stack(parts), axis=0) - math.log(len(parts))


def crosstalk_mix(e_histories, eta: float = 1.0) -> np.ndarray:
    """Per-block pseudo-Bayes mixture of whole e-processes (one per cross-talk mode).

    ``e_histories`` has shape (R, M+1, ...) of log E series.  With eta = 1 and a
    uniform prior the result telescopes to log of the average of the E's, so it
    is never below max_rho log E_rho - log R.
    """
    if isinstance(e_histories, (list, tuple)):
        lengths = {len(h) for h in e_histories}
        if len(lengths) > 1:
            raise MisalignedHistories(f"histories have lengths {sorted(lengths)}")
    log_e = np.asarray(e_histories, dtype=float)
    steps = np.diff(log_e, axis=1)
    spec = CombinerSpec("pseudo-bayes", eta=eta)
    return combine(spec, steps)


# -- the global-null test -----------------------------------------------------------


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # not a pytest class

    combiner: CombinerSpec = CombinerSpec()
    crosstalk: CrossTalkMode = CrossTalkMode.NONE
    alpha: float = 0.05
    prior: BetaPrior = DEFAULT_PRIOR
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        object.__setattr__(self, "crosstalk", CrossTalkMode.parse(self.crosstalk))


@dataclass
class DecisionTrace:
    log_e: np.ndarray
    alpha: float
    rejected_at: int | None = None

    @property
    def rejected(self) -> bool:
        return self.rejected_at is not None

    @property
    def n_blocks(self) -> int:
        return len(self.log_e) - 1

    def verdict(self) -> str:
        if self.rejected:
            return f"REJECT at block {self.rejected_at}"
        return f"NO REJECTION after {self.n_blocks} blocks"


def first_crossing(log_e: np.ndarray, alpha: float) -> int | None:
    hits = np.flatnonzero(np.asarray(log_e) >= math.log(1.0 / alpha))
    return int(hits[0]) if len(hits) else None


def _mode_histories(stream, mode, family, deltas, prior, cache):
    key = (mode, stream.n_strata, prior)
    if cache is not None and key in cache:
        return cache[key]
    out = run_blocks(stream, mode, family, deltas, prior).histories()
    if cache is not None:
        cache[key] = out
    return out


def global_log_e(blocks, config: TestConfig = TestConfig(), cache: dict | None = None,
                 n_strata: int | None = None) -> np.ndarray:
    """log E^(m), m = 0..M, of the configured e-process for the global null.

    ``cache`` (any dict, initially empty) lets several configurations share the
    per-stratum histories of one stream.
    """
    stream = as_stream(blocks, n_strata=n_strata)
    if not config.stratified:
        stream = stream.unstratified()
    if config.crosstalk is CrossTalkMode.MIX:
        parts = [combine(config.combiner,
                         _mode_histories(stream, mode, "global", None, config.prior, cache)[..., 0])
                 for mode in MIX_COMPONENTS]
        return crosstalk_mix(parts)
    hist = _mode_histories(stream, config.crosstalk, "global", None, config.prior, cache)
    return combine(config.combiner, hist[..., 0])


def test_global_null(blocks, config: TestConfig = TestConfig(),
                     n_strata: int | None = None) -> DecisionTrace:
    """Anytime-valid test of theta_a = theta_b in every stratum.

    Rejects at the first block where E >= 1/alpha; the guarantee holds for any
    stopping rule, so the returned trace may be truncated anywhere.
    """
    stream = as_stream(blocks, n_strata=n_strata)
    log_e = global_log_e(stream, config)
    return DecisionTrace(log_e, config.alpha, first_crossing(log_e, config.alpha))


test_global_null.__test__ = False
