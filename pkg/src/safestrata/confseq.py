"""Anytime-valid confidence sequences for risk differences, built on a delta grid.

Each grid value delta indexes a null (theta_b - theta_a = delta, or a half-plane)
and carries its own e-process.  A value is excluded once its e-process reaches
1/alpha; excluded values stay excluded, which is the running intersection.

Grid quantisation is handled conservatively: two-sided per-stratum and
mean-effect intervals report the hull of not-yet-rejected grid values widened
by one grid step per side; one-sided bounds report the extreme rejected grid
value itself.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from . import _kernels as K
from .eprocess import CombinerSpec, combine, crosstalk_mix, run_blocks
from .errors import EmptyConfidenceSet, InfeasibleConstraint
from .ingest import BlockStream, as_stream
from .learners import DEFAULT_PRIOR, MIX_COMPONENTS, BetaPrior, CrossTalkMode

DEFAULT_STEP = 0.01
FINE_STEP = 0.001


@dataclass(frozen=True)
class CsInterval:
    lower: float
    upper: float
    time: int
    empty: bool = False

    def __post_init__(self):
        if not self.empty and self.lower > self.upper:
            raise ValueError(f"lower {self.lower} > upper {self.upper} in a nonempty interval")

    @property
    def width(self) -> float:
        return 0.0 if self.empty else self.upper - self.lower

    def __contains__(self, value) -> bool:
        return (not self.empty) and self.lower - 1e-12 <= value <= self.upper + 1e-12


def empty_interval(time: int) -> CsInterval:
    return CsInterval(math.nan, math.nan, time, empty=True)


@dataclass(frozen=True)
class StratumWeights:
    pi: tuple

    def __post_init__(self):
        w = np.asarray(self.pi, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("need one weight per stratum")
        if (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"stratum weights must be nonnegative and sum to 1, got {w.tolist()}")
        object.__setattr__(self, "pi", tuple(float(x) for x in w))

    def __len__(self):
        return len(self.pi)


def delta_grid(step: float = DEFAULT_STEP) -> np.ndarray:
    """Uniform grid over [-1, 1]; 2/step must be an integer."""
    n = round(2.0 / step)
    if n < 1 or not math.isclose(n * step, 2.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"grid step {step} does not divide [-1, 1]")
    return np.round(np.linspace(-1.0, 1.0, n + 1), 12)


@dataclass
class CsGrid:
    """Per-delta log e-process values over time: ``log_e[m, i]`` at ``deltas[i]``."""

    deltas: np.ndarray
    log_e: np.ndarray
    family: str

    @property
    def step(self) -> float:
        return float(self.deltas[1] - self.deltas[0])

    def rejected(self, alpha: float) -> np.ndarray:
        """Ever-rejected mask per time: running maximum crosses log(1/alpha)."""
        return np.maximum.accumulate(self.log_e, axis=0) >= math.log(1.0 / alpha)


# -- interval bookkeeping ---------------------------------------------------------


def running_intersection(intervals: Sequence[CsInterval]) -> list[CsInterval]:
    out = []
    lo, hi, empty = -math.inf, math.inf, False
    for iv in intervals:
        if not empty:
            if iv.empty:
                empty = True
            else:
                lo, hi = max(lo, iv.lower), min(hi, iv.upper)
                empty = lo > hi
        out.append(empty_interval(iv.time) if empty else CsInterval(lo, hi, iv.time))
    return out


def _hull_interval(deltas, keep, step, time) -> CsInterval:
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        return empty_interval(time)
    lo = round(max(-1.0, deltas[idx[0]] - step), 12)
    hi = round(min(1.0, deltas[idx[-1]] + step), 12)
    return CsInterval(float(lo), float(hi), time)


def _warn_if_empty(series, what):
    if any(iv.empty for iv in series):
        first = next(iv.time for iv in series if iv.empty)
        warnings.warn(f"{what} confidence set became empty at block {first}",
                      EmptyConfidenceSet, stacklevel=3)
    return series


# -- per-stratum grids ----------------------------------------------------------------


def _mix_strata(cums: Sequence[np.ndarray]) -> np.ndarray:
    # cums: per-mode arrays (K, M+1, G); mix each stratum's e-process over modes
    stacked = np.stack([np.moveaxis(c, 0, 1) for c in cums])  # (R, M+1, K, G)
    return np.moveaxis(crosstalk_mix(stacked), 1, 0)


def _cumulative(hist: np.ndarray) -> np.ndarray:
    k, _, g = hist.shape
    return np.concatenate([np.zeros((k, 1, g)), np.cumsum(hist, axis=1)], axis=1)


def stratum_traces(stream: BlockStream, family: str, deltas, mode, prior):
    mode = CrossTalkMode.parse(mode)
    modes = MIX_COMPONENTS if mode is CrossTalkMode.MIX else (mode,)
    return [run_blocks(stream, md, family, deltas, prior) for md in modes]


def stratum_grids(blocks, family: str = "eq", mode=CrossTalkMode.NONE,
                  grid_step: float = DEFAULT_STEP, prior: BetaPrior = DEFAULT_PRIOR,
                  n_strata: int | None = None) -> list[CsGrid]:
    """Per-stratum log e-processes over the delta grid, one :class:`CsGrid` per stratum."""
    stream = as_stream(blocks, n_strata=n_strata)
    deltas = delta_grid(grid_step)
    cum = _stratum_cum(stream, family, deltas, mode, prior)[0]
    return [CsGrid(deltas, cum[k], family) for k in range(stream.n_strata)]


def _stratum_cum(stream, family, deltas, mode, prior):
    traces = stratum_traces(stream, family, deltas, mode, prior)
    cums = [_cumulative(t.histories()) for t in traces]
    cum = cums[0] if len(cums) == 1 else _mix_strata(cums)
    return cum, traces


def _intervals_from_grid(grid: CsGrid, alpha: float) -> list[CsInterval]:
    rejected = grid.rejected(alpha)
    step = grid.step
    return [_hull_interval(grid.deltas, ~rejected[m], step, m) for m in range(len(rejected))]


def cs_per_stratum(blocks, stratum: int = 0, mode=CrossTalkMode.NONE, alpha: float = 0.05,
                   grid_step: float = DEFAULT_STEP, prior: BetaPrior = DEFAULT_PRIOR,
                   n_strata: int | None = None) -> list[CsInterval]:
    """Confidence sequence for one stratum's risk difference, indexed by block m = 0..M.

    Cross-talk lets other strata's data shape this stratum's estimates; the
    stratum's e-process still only moves on its own blocks.
    """
    return cs_all_strata(blocks, mode, alpha, grid_step, prior, n_strata)[stratum]


def cs_all_strata(blocks, mode=CrossTalkMode.NONE, alpha: float = 0.05,
                  grid_step: float = DEFAULT_STEP, prior: BetaPrior = DEFAULT_PRIOR,
                  n_strata: int | None = None) -> list[list[CsInterval]]:
    _check_alpha(alpha)
    grids = stratum_grids(blocks, "eq", mode, grid_step, prior, n_strata)
    return [_warn_if_empty(running_intersection(_intervals_from_grid(g, alpha)), "per-stratum")
            for g in grids]


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


# -- minimum / maximum effect -------------------------------------------------------------


def _running_first(mask: np.ndarray, deltas: np.ndarray, first: bool, default: float):
    # per time: smallest (first=True) or largest rejected delta, or default
    out = np.full(mask.shape[0], default)
    for m in range(mask.shape[0]):
        idx = np.flatnonzero(mask[m])
        if len(idx):
            out[m] = deltas[idx[0]] if first else deltas[idx[-1]]
    return out


def min_upper_log_e(blocks, combiner: CombinerSpec, mode=CrossTalkMode.NONE,
                    grid_step: float = DEFAULT_STEP, prior: BetaPrior = DEFAULT_PRIOR,
                    n_strata: int | None = None) -> CsGrid:
    """Compound e-process per delta for 'every stratum has risk difference >= delta'."""
    if combiner.kind == "min":
        raise ValueError("the upper bound needs a combiner valid for an all-strata null")
    stream = as_stream(blocks, n_strata=n_strata)
    deltas = delta_grid(grid_step)
    cum, _ = _stratum_cum(stream, "ge", deltas, mode, prior)
    return CsGrid(deltas, combine(combiner, np.diff(cum, axis=1)), "ge")


def min_lower_log_e(blocks, mode=CrossTalkMode.NONE, grid_step: float = DEFAULT_STEP,
                    prior: BetaPrior = DEFAULT_PRIOR, n_strata: int | None = None) -> CsGrid:
    """Minimum over strata of the per-stratum e-processes for risk difference <= delta."""
    stream = as_stream(blocks, n_strata=n_strata)
    deltas = delta_grid(grid_step)
    cum, _ = _stratum_cum(stream, "le", deltas, mode, prior)
    return CsGrid(deltas, cum.min(axis=0), "le")


def cs_min_upper(blocks, combiner: CombinerSpec = CombinerSpec(), alpha: float = 0.05,
                 grid_step: float = DEFAULT_STEP, mode=CrossTalkMode.NONE,
                 prior: BetaPrior = DEFAULT_PRIOR, n_strata: int | None = None) -> np.ndarray:
    """Upper bound on the minimum risk difference over strata, for m = 0..M.

    The bound is the smallest grid delta whose compound e-value has reached
    1/alpha (at this or any earlier block), else 1.
    """
    _check_alpha(alpha)
    grid = min_upper_log_e(blocks, combiner, mode, grid_step, prior, n_strata)
    return _running_first(grid.rejected(alpha), grid.deltas, True, 1.0)


def cs_min_lower(blocks, alpha: float = 0.05, grid_step: float = DEFAULT_STEP,
                 mode=CrossTalkMode.NONE, prior: BetaPrior = DEFAULT_PRIOR,
                 n_strata: int | None = None) -> np.ndarray:
    """Lower bound on the minimum risk difference: largest rejected grid delta, else -1."""
    _check_alpha(alpha)
    grid = min_lower_log_e(blocks, mode, grid_step, prior, n_strata)
    return _running_first(grid.rejected(alpha), grid.deltas, False, -1.0)


def cs_min_two_sided(blocks, combiner: CombinerSpec = CombinerSpec(), alpha: float = 0.05,
                     grid_step: float = DEFAULT_STEP, mode=CrossTalkMode.NONE,
                     prior: BetaPrior = DEFAULT_PRIOR, split_alpha: bool = False,
                     n_strata: int | None = None) -> list[CsInterval]:
    """Intersection of the one-sided sequences for the minimum effect.

    Each side runs at level alpha by default; ``split_alpha`` runs each at
    alpha / 2 instead.
    """
    level = alpha / 2 if split_alpha else alpha
    upper = cs_min_upper(blocks, combiner, level, grid_step, mode, prior, n_strata)
    lower = cs_min_lower(blocks, level, grid_step, mode, prior, n_strata)
    series = [CsInterval(lo, hi, m) if lo <= hi else empty_interval(m)
              for m, (lo, hi) in enumerate(zip(lower, upper))]
    return _warn_if_empty(running_intersection(series), "minimum-effect")


def cs_max_two_sided(blocks, combiner: CombinerSpec = CombinerSpec(), alpha: float = 0.05,
                     grid_step: float = DEFAULT_STEP, mode=CrossTalkMode.NONE,
                     prior: BetaPrior = DEFAULT_PRIOR, split_alpha: bool = False,
                     n_strata: int | None = None) -> list[CsInterval]:
    """Maximum-effect sequence: the minimum-effect sequence of the group-swapped data, negated."""
    stream = as_stream(blocks, n_strata=n_strata).swapped()
    mins = cs_min_two_sided(stream, combiner, alpha, grid_step, mode, prior, split_alpha)
    return [empty_interval(iv.time) if iv.empty else CsInterval(-iv.upper, -iv.lower, iv.time)
            for iv in mins]


# -- mean effect (universal inference) ----------------------------------------------------


class StratumCurve:
    """One stratum's log e-value against RD_EQ(delta) at a fixed time, as a function of delta.

    Grid values are looked up; off-grid values are recomputed exactly from the
    stored per-block estimates and counts.
    """

    def __init__(self, deltas: np.ndarray, values: np.ndarray, exact: Callable | None = None):
        self.deltas = deltas
        self.values = values
        self.step = float(deltas[1] - deltas[0])
        self._exact = exact

    def __call__(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        idx = np.clip(np.rint((d - self.deltas[0]) / self.step).astype(np.int64),
                      0, len(self.deltas) - 1)
        out = self.values[idx]
        off = np.abs(self.deltas[idx] - d) > 1e-9
        if off.any():
            if self._exact is None:
                out = np.where(off, np.interp(d, self.deltas, self.values), out)
            else:
                uniq, inv = np.unique(d[off], return_inverse=True)
                out = out.copy()
                out[off] = self._exact(uniq)[inv]
        return out


def _history_evaluator(traces, stratum: int, m: int):
    """Exact log E at time m for arbitrary deltas, from stored per-block estimates."""
    parts = []
    for tr in traces:
        sel = np.flatnonzero(tr.stream.strata[:m] == stratum)
        parts.append((np.ascontiguousarray(tr.theta[sel, 0]), np.ascontiguousarray(tr.theta[sel, 1]),
                      tr.stream.s_a[sel].astype(float), tr.stream.s_b[sel].astype(float)))
    d = traces[0].stream.design

    def evaluate(deltas):
        deltas = np.ascontiguousarray(deltas, dtype=float)
        vals = [K.log_e_rd_history(ta, tb, sa, sb, d.n_a, d.n_b, deltas, K.SIDE_EQ)
                for ta, tb, sa, sb in parts]
        if len(vals) == 1:
            return vals[0]
        return logsumexp(np.stack(vals), axis=0) - math.log(len(vals))
    return evaluate


def _free_axes(pi):
    last = int(np.argmax(pi))
    return [i for i in range(len(pi)) if i != last], last


def _coarse_many(curves, pi, delta_stars, lo_grid, chunk=2_000_000):
    """Coarse constrained minimum for each delta*; returns (values, free-coordinate argmins)."""
    free, last = _free_axes(pi)
    g = len(lo_grid)
    mesh = np.meshgrid(*([lo_grid] * len(free)), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1) if free else np.zeros((1, 0))
    partial = np.zeros(len(pts))
    weighted = np.zeros(len(pts))
    for col, i in enumerate(free):
        vals = curves[i](lo_grid)
        partial += vals[np.rint((pts[:, col] + 1.0) * (g - 1) / 2.0).astype(np.int64)]
        weighted += pi[i] * pts[:, col]
    delta_stars = np.atleast_1d(np.asarray(delta_stars, dtype=float))
    best_val = np.empty(len(delta_stars))
    best_pt = np.empty((len(delta_stars), len(free)))
    rows = max(1, chunk // len(pts))
    for start in range(0, len(delta_stars), rows):
        ds = delta_stars[start:start + rows]
        d_last = (ds[:, None] - weighted[None, :]) / pi[last]
        ok = np.abs(d_last) <= 1.0 + 1e-12
        total = np.full(d_last.shape, np.inf)
        total[ok] = partial[np.nonzero(ok)[1]] + curves[last](np.clip(d_last[ok], -1.0, 1.0))
        arg = np.argmin(total, axis=1)
        best_val[start:start + rows] = total[np.arange(len(ds)), arg]
        best_pt[start:start + rows] = pts[arg]
    return best_val, best_pt


def _objective(curves, pi, delta_star, free, last, points):
    """Objective at free-coordinate points (N, F); +inf where infeasible."""
    points = np.atleast_2d(points)
    d_last = (delta_star - points @ np.asarray([pi[i] for i in free])) / pi[last]
    inside = (np.abs(d_last) <= 1.0 + 1e-12) & (np.abs(points) <= 1.0 + 1e-12).all(axis=1)
    val = np.full(len(points), np.inf)
    if inside.any():
        p = points[inside]
        v = curves[last](np.clip(d_last[inside], -1.0, 1.0))
        for col, i in enumerate(free):
            v = v + curves[i](p[:, col])
        val[inside] = v
    return val


def _refine(curves, pi, delta_star, free, last, start, step, fine):
    """Fine box scan around the coarse optimum, then descend to a local grid minimum."""
    n = len(free)
    reach = int(round(step / fine))
    offsets = np.arange(-reach, reach + 1) * fine
    box = np.array(list(itertools.product(offsets, repeat=n))) + start
    vals = _objective(curves, pi, delta_star, free, last, box)
    best = int(np.argmin(vals))
    x, fx = box[best], vals[best]
    moves = np.concatenate([np.eye(n), -np.eye(n)]) * fine
    for _ in range(10_000):
        cand = x + moves
        cv = _objective(curves, pi, delta_star, free, last, cand)
        j = int(np.argmin(cv))
        if not cv[j] < fx:
            break
        x, fx = cand[j], cv[j]
    # how much one fine step changes the objective: bounds what a polish can gain
    rise = cv[np.isfinite(cv)] - fx
    return float(fx), x, float(rise.max()) if len(rise) else 0.0


def _polish(curves, pi, delta_star, free, last, x, fx, fine):
    """Continuous Nelder-Mead from the fine-grid optimum; keeps the better of the two."""
    f = lambda p: float(_objective(curves, pi, delta_star, free, last, p[None, :])[0])
    simplex = np.vstack([x, x + np.eye(len(x)) * fine])
    res = optimize.minimize(f, x, method="Nelder-Mead",
                            options=dict(initial_simplex=simplex, xatol=1e-10, fatol=1e-13))
    if res.fun < fx:
        return float(res.fun), res.x
    return fx, x


def mean_effect_evalue(curves: Sequence[Callable], weights, delta_star: float,
                       grid_step: float = DEFAULT_STEP, fine_step: float = FINE_STEP,
                       threshold: float | None = None, return_argmin: bool = False):
    """Universal-inference log e-value for 'the weighted mean risk difference is delta_star'.

    Minimises sum_k log E_k(delta_k) over delta vectors in [-1, 1]^K with
    sum_k pi_k delta_k = delta_star: exhaustive enumeration of the free
    coordinates on the coarse grid, a fine-step refinement that stops at a
    local grid minimum, then a continuous Nelder-Mead polish.  ``curves`` are callables mapping arrays of delta to
    log e-values.  With ``threshold`` set, refinement is skipped when the coarse
    minimum is already below it, since refining can only lower the value.
    """
    pi = _weight_array(weights)
    if len(pi) != len(curves):
        raise ValueError("need one weight per stratum curve")
    if not -1.0 - 1e-12 <= delta_star <= 1.0 + 1e-12 or pi.max() <= 0:
        raise InfeasibleConstraint(f"mean risk difference {delta_star} is unattainable")
    values, points = _coarse_many(curves, pi, [delta_star], delta_grid(grid_step))
    value, point = float(values[0]), points[0]
    if not math.isfinite(value):
        raise InfeasibleConstraint(f"no grid point satisfies the mean constraint {delta_star}")
    free, last = _free_axes(pi)
    if free and (threshold is None or value >= threshold):
        fine_value, fine_point, _ = _refine(curves, pi, delta_star, free, last, point,
                                            grid_step, fine_step)
        if fine_value < value:
            value, point = fine_value, fine_point
        if threshold is None or value >= threshold:
            value, point = _polish(curves, pi, delta_star, free, last, point, value, fine_step)
    if not return_argmin:
        return value
    full = np.empty(len(pi))
    full[free] = point
    full[last] = (delta_star - sum(pi[i] * full[i] for i in free)) / pi[last]
    return value, full


def _weight_array(weights) -> np.ndarray:
    return np.asarray(weights.pi if isinstance(weights, StratumWeights) else weights, dtype=float)


def cs_mean_effect(blocks, weights, alpha: float = 0.05, grid_step: float = DEFAULT_STEP,
                   mode=CrossTalkMode.NONE, prior: BetaPrior = DEFAULT_PRIOR,
                   fine_step: float = FINE_STEP, n_strata: int | None = None
                   ) -> list[CsInterval]:
    """Confidence sequence for the population-weighted mean risk difference.

    A grid value delta* is excluded once its universal-inference e-value has
    reached 1/alpha.  Only values inside the current interval are re-examined,
    since everything outside has already been excluded.
    """
    _check_alpha(alpha)
    weights = weights if isinstance(weights, StratumWeights) else StratumWeights(tuple(weights))
    stream = as_stream(blocks, n_strata=n_strata)
    if len(weights) != stream.n_strata:
        raise ValueError(f"{len(weights)} weights for {stream.n_strata} strata")
    deltas = delta_grid(grid_step)
    cum, traces = _stratum_cum(stream, "eq", deltas, mode, prior)
    thr = math.log(1.0 / alpha)
    pi = _weight_array(weights)
    free, last = _free_axes(pi)
    alive = np.ones(len(deltas), dtype=bool)
    series = [CsInterval(-1.0, 1.0, 0)]
    for m in range(1, len(stream) + 1):
        curves = [StratumCurve(deltas, cum[k, m], _history_evaluator(traces, k, m))
                  for k in range(stream.n_strata)]
        idx = np.flatnonzero(alive)
        values, points = _coarse_many(curves, pi, deltas[idx], deltas)
        for i, v, p in zip(idx, values, points):
            if v >= thr and free:
                fv, fp, rise = _refine(curves, pi, deltas[i], free, last, p, grid_step, fine_step)
                if fv < v:
                    v, p = fv, fp
                if thr <= v < thr + rise:
                    v = _polish(curves, pi, deltas[i], free, last, p, v, fine_step)[0]
            if v >= thr:
                alive[i] = False
        series.append(_hull_interval(deltas, alive, grid_step, m))
    return _warn_if_empty(running_intersection(series), "mean-effect")
