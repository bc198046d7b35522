"""Monte-Carlo harness: declarative experiment configs, replicate fan-out, result tables.

A config names the generating distribution, the block design, the horizon,
replication count, level, seed and a list of methods.  Replicate ``r`` draws its
stream with seed ``seed + r``, so results do not depend on how replicates are
spread over workers.

Long-format rows are ``method,replicate,m,log10_e,lower,upper,rejected``.  For
tests, ``rejected`` is 1 once E has reached 1/alpha and rows stop there
(optional stopping).  For confidence sequences, ``rejected`` marks that 0 has
been excluded; an empty set is written with ``nan`` bounds.
"""
from __future__ import annotations

import csv
import io
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import confseq as cs
from .eprocess import CombinerSpec, TestConfig, global_log_e
from .errors import EmptyConfidenceSet
from .ingest import SCHEDULES, generate_stream
from .learners import DEFAULT_PRIOR, BetaPrior, CrossTalkMode
from .model import BlockDesign, ThetaPair

ROW_HEADER = ("method", "replicate", "m", "log10_e", "lower", "upper", "rejected")
KINDS = ("test", "cs-stratum", "cs-min", "cs-max", "cs-mean", "cs-min-upper", "cs-min-lower")
LOG10 = math.log(10.0)


class ConfigError(ValueError):
    """Schema violation in a simulation config; the message starts with the field path."""


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str = "test"
    combiner: CombinerSpec = CombinerSpec()
    crosstalk: CrossTalkMode = CrossTalkMode.NONE
    stratified: bool = True
    weights: tuple | None = None
    split_alpha: bool = False


@dataclass(frozen=True)
class SimConfig:
    name: str
    theta: tuple
    blocks: tuple
    methods: tuple
    design: BlockDesign = BlockDesign()
    schedule: str = "round-robin"
    alpha: float = 0.05
    replications: int = 100
    seed: int = 0
    grid_step: float = cs.DEFAULT_STEP
    prior: BetaPrior = DEFAULT_PRIOR
    description: str = ""

    @property
    def horizon(self) -> int:
        return int(sum(self.blocks))

    @property
    def risk_differences(self) -> np.ndarray:
        return np.array([t.risk_difference for t in self.theta])

    def target(self, method: MethodSpec, stratum: int | None = None) -> float:
        """True value a confidence-sequence method should cover."""
        rd = self.risk_differences
        if method.kind == "cs-stratum":
            return float(rd[stratum])
        if method.kind in ("cs-min", "cs-min-upper", "cs-min-lower"):
            return float(rd.min())
        if method.kind == "cs-max":
            return float(rd.max())
        if method.kind == "cs-mean":
            return float(np.dot(method.weights, rd))
        raise ValueError(f"{method.kind} has no estimation target")


# -- config parsing ----------------------------------------------------------------------


def _field(table, key, path, kind, default=..., check=None):
    where = f"{path}.{key}" if path else key
    if key not in table:
        if default is ...:
            raise ConfigError(f"{where}: required field missing")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{where}: expected {names}, got {value!r}")
    if check is not None:
        msg = check(value)
        if msg:
            raise ConfigError(f"{where}: {msg}")
    return value


def _unknown(table, allowed, path):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"{path or 'config'}: unknown field(s) {', '.join(extra)}")


def _prob_list(table, key, path, k=None):
    vals = _field(table, key, path, list)
    where = f"{path}.{key}"
    out = []
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0 <= v <= 1:
            raise ConfigError(f"{where}[{i}]: expected a probability, got {v!r}")
        out.append(float(v))
    if k is not None and len(out) != k:
        raise ConfigError(f"{where}: expected {k} entries, got {len(out)}")
    return out


def parse_switch_prior(text: str) -> tuple[int, int]:
    """``uniform:lo:hi`` -> (lo, hi)."""
    parts = str(text).split(":")
    if len(parts) != 3 or parts[0] != "uniform":
        raise ValueError(f"switch prior must look like uniform:lo:hi, got {text!r}")
    lo, hi = int(parts[1]), int(parts[2])
    if lo < 1 or hi < lo:
        raise ValueError(f"switch prior needs 1 <= lo <= hi, got {text!r}")
    return lo, hi


def _method(table, path, n_strata) -> MethodSpec:
    _unknown(table, ("name", "kind", "combiner", "crosstalk", "stratified", "eta", "switch_at",
                     "switch_prior", "weights", "prior_weights", "split_alpha"), path)
    kind = _field(table, "kind", path, str, "test",
                  lambda v: None if v in KINDS else f"must be one of {', '.join(KINDS)}")
    try:
        crosstalk = CrossTalkMode.parse(_field(table, "crosstalk", path, str, "none"))
    except ValueError as exc:
        raise ConfigError(f"{path}.crosstalk: {exc}") from None
    switch_range = None
    if "switch_prior" in table:
        try:
            switch_range = parse_switch_prior(_field(table, "switch_prior", path, str))
        except ValueError as exc:
            raise ConfigError(f"{path}.switch_prior: {exc}") from None
    try:
        prior_w = table.get("prior_weights")
        combiner = CombinerSpec(
            _field(table, "combiner", path, str, "multiply"),
            weights=tuple(prior_w) if prior_w is not None else None,
            eta=_field(table, "eta", path, float, 1.0),
            switch_at=_field(table, "switch_at", path, int, None),
            switch_range=switch_range)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    weights = None
    if kind == "cs-mean":
        weights = tuple(_prob_list(table, "weights", path, n_strata))
        if not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
            raise ConfigError(f"{path}.weights: must sum to 1, got {sum(weights):g}")
    name = _field(table, "name", path, str, None) or f"{kind}:{combiner.label}:{crosstalk.value}"
    return MethodSpec(name, kind, combiner, crosstalk,
                      _field(table, "stratified", path, bool, True), weights,
                      _field(table, "split_alpha", path, bool, False))


def parse_config(data: dict, name: str = "experiment") -> SimConfig:
    _unknown(data, ("name", "description", "alpha", "replications", "seed", "schedule",
                    "grid_step", "design", "strata", "prior", "methods"), "")
    strata = _field(data, "strata", "", dict)
    _unknown(strata, ("theta_a", "theta_b", "blocks"), "strata")
    ta = _prob_list(strata, "theta_a", "strata")
    tb = _prob_list(strata, "theta_b", "strata", len(ta))
    k = len(ta)
    if k == 0:
        raise ConfigError("strata.theta_a: need at least one stratum")
    blocks = _field(strata, "blocks", "strata", (int, list))
    blocks = [blocks] * k if isinstance(blocks, int) else blocks
    if len(blocks) != k or any(isinstance(b, bool) or not isinstance(b, int) or b < 0
                               for b in blocks):
        raise ConfigError(f"strata.blocks: expected {k} nonnegative integers, got {blocks!r}")
    design = _field(data, "design", "", dict, {})
    _unknown(design, ("n_a", "n_b"), "design")
    positive = lambda v: None if v >= 1 else "must be >= 1"
    design = BlockDesign(_field(design, "n_a", "design", int, 1, positive),
                         _field(design, "n_b", "design", int, 1, positive))
    prior = _field(data, "prior", "", dict, {})
    _unknown(prior, ("alpha", "beta"), "prior")
    pos = lambda v: None if v > 0 else "must be > 0"
    prior = BetaPrior(_field(prior, "alpha", "prior", float, 0.18, pos),
                      _field(prior, "beta", "prior", float, 0.18, pos))
    methods = _field(data, "methods", "", list)
    if not methods:
        raise ConfigError("methods: need at least one method")
    specs = []
    for i, m in enumerate(methods):
        if not isinstance(m, dict):
            raise ConfigError(f"methods[{i}]: expected a table")
        specs.append(_method(m, f"methods[{i}]", k))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("methods: method names must be unique")
    return SimConfig(
        name=_field(data, "name", "", str, name),
        description=_field(data, "description", "", str, ""),
        theta=tuple(ThetaPair(a, b) for a, b in zip(ta, tb)),
        blocks=tuple(blocks), methods=tuple(specs), design=design,
        schedule=_field(data, "schedule", "", str, "round-robin",
                        lambda v: None if v in SCHEDULES else f"must be one of {SCHEDULES}"),
        alpha=_field(data, "alpha", "", float, 0.05,
                     lambda v: None if 0 < v < 1 else "must lie in (0, 1)"),
        replications=_field(data, "replications", "", int, 100,
                            lambda v: None if v >= 0 else "must be >= 0"),
        seed=_field(data, "seed", "", int, 0),
        grid_step=_field(data, "grid_step", "", float, cs.DEFAULT_STEP),
        prior=prior)


def builtin_configs() -> list[str]:
    root = resources.files("safestrata") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_config(source) -> SimConfig:
    """Read a config from a path, or by name from the bundled figure configs."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
        name = path.stem
    else:
        bundled = resources.files("safestrata") / "configs" / f"{source}.toml"
        if not bundled.is_file():
            raise FileNotFoundError(f"no config file {source!r} and no bundled config of that "
                                    f"name (bundled: {', '.join(builtin_configs())})")
        text = bundled.read_text()
        name = str(source)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: {exc}") from None
    return parse_config(data, name)


# -- running replicates -------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    return "nan" if math.isnan(x) else f"{x:.6f}"


def _test_rows(method, stream, cfg, cache):
    config = TestConfig(method.combiner, method.crosstalk, cfg.alpha, cfg.prior,
                        method.stratified)
    key = "stratified" if method.stratified else "pooled"
    log_e = global_log_e(stream, config, cache.setdefault(key, {}))
    thr = math.log(1.0 / cfg.alpha)
    rows = []
    for m, v in enumerate(log_e):
        hit = v >= thr
        rows.append((method.name, m, _fmt(v / LOG10), "", "", int(hit)))
        if hit:
            break
    return rows


def _interval_rows(name, series):
    return [(name, iv.time, "", _fmt(iv.lower), _fmt(iv.upper), int(0.0 not in iv))
            for iv in series]


def _bound_rows(name, values, lower: bool):
    return [(name, m, "", _fmt(v if lower else -1.0), _fmt(1.0 if lower else v),
             int(v > 0 if lower else v < 0)) for m, v in enumerate(values)]


def method_series(method: MethodSpec, stream, cfg: SimConfig):
    """Confidence-sequence output of one method: {row label: list of CsInterval}."""
    args = dict(alpha=cfg.alpha, grid_step=cfg.grid_step, mode=method.crosstalk,
                prior=cfg.prior)
    if method.kind == "cs-stratum":
        per = cs.cs_all_strata(stream, **args)
        return {f"{method.name}:stratum{k + 1}": s for k, s in enumerate(per)}
    if method.kind == "cs-min":
        return {method.name: cs.cs_min_two_sided(stream, method.combiner,
                                                 split_alpha=method.split_alpha, **args)}
    if method.kind == "cs-max":
        return {method.name: cs.cs_max_two_sided(stream, method.combiner,
                                                 split_alpha=method.split_alpha, **args)}
    if method.kind == "cs-mean":
        return {method.name: cs.cs_mean_effect(stream, method.weights, **args)}
    raise ValueError(method.kind)


def _method_rows(method, stream, cfg, cache):
    if method.kind == "test":
        return _test_rows(method, stream, cfg, cache)
    if method.kind == "cs-min-upper":
        return _bound_rows(method.name, cs.cs_min_upper(
            stream, method.combiner, cfg.alpha, cfg.grid_step, method.crosstalk, cfg.prior), False)
    if method.kind == "cs-min-lower":
        return _bound_rows(method.name, cs.cs_min_lower(
            stream, cfg.alpha, cfg.grid_step, method.crosstalk, cfg.prior), True)
    rows = []
    for label, series in method_series(method, stream, cfg).items():
        rows.extend(_interval_rows(label, series))
    return rows


def replicate_stream(cfg: SimConfig, replicate: int):
    return generate_stream(cfg.theta, cfg.design, list(cfg.blocks), cfg.schedule,
                           cfg.seed + replicate)


def run_replicate(cfg: SimConfig, replicate: int) -> list[tuple]:
    stream = replicate_stream(cfg, replicate)
    cache: dict = {}
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyConfidenceSet)
        for method in cfg.methods:
            rows.extend((name, replicate, m, *rest)
                        for name, m, *rest in _method_rows(method, stream, cfg, cache))
    return rows


def _run_chunk(args):
    cfg, reps = args
    return [run_replicate(cfg, r) for r in reps]


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass
class SimulationResult:
    config: SimConfig
    rows: list = field(default_factory=list)

    def long_table(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(ROW_HEADER)
        w.writerows(self.rows)
        return out.getvalue()

    def labels(self) -> list[str]:
        return list(dict.fromkeys(r[0] for r in self.rows))

    def power(self) -> dict[str, float]:
        """Fraction of replicates in which each test method rejected by the horizon."""
        return power_from_rows(self.rows, self.config)

    def mean_width(self) -> dict[tuple[str, int], float]:
        return mean_width_from_rows(self.rows)

    def summary_table(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        kinds = {m.kind for m in self.config.methods}
        has_tests = "test" in kinds
        power = self.power()
        if has_tests:
            w.writerow(("method", "power"))
            w.writerows((k, f"{v:.6f}") for k, v in power.items())
        widths = self.mean_width()
        if kinds - {"test"}:
            if has_tests:
                out.write("\n")
            w.writerow(("method", "m", "mean_width"))
            w.writerows((k, m, f"{v:.6f}") for (k, m), v in widths.items())
        return out.getvalue()


def power_from_rows(rows, cfg: SimConfig) -> dict[str, float]:
    test_names = [m.name for m in cfg.methods if m.kind == "test"]
    if cfg.replications == 0:
        return {name: 0.0 for name in test_names}
    hits = {name: set() for name in test_names}
    for name, rep, m, log10_e, lower, upper, rejected in rows:
        if name in hits and int(rejected):
            hits[name].add(int(rep))
    return {name: len(h) / cfg.replications for name, h in hits.items()}


def _width(lower, upper) -> float:
    lo, hi = float(lower), float(upper)
    return 0.0 if math.isnan(lo) or math.isnan(hi) else hi - lo


def mean_width_from_rows(rows) -> dict[tuple[str, int], float]:
    """Mean interval width per (method, m) over replicates, for interval rows."""
    acc: dict[tuple[str, int], list] = {}
    for name, rep, m, log10_e, lower, upper, rejected in rows:
        if lower == "" or upper == "":
            continue
        acc.setdefault((name, int(m)), []).append(_width(lower, upper))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def run_simulation(cfg: SimConfig, workers: int | None = None,
                   replications: int | None = None, seed: int | None = None,
                   alpha: float | None = None) -> SimulationResult:
    """Run every replicate and return rows in replicate order, independent of ``workers``."""
    if replications is not None:
        cfg = replace(cfg, replications=replications)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if alpha is not None:
        cfg = replace(cfg, alpha=alpha)
    workers = default_workers() if workers is None else max(1, int(workers))
    reps = list(range(cfg.replications))
    if workers == 1 or len(reps) <= 1:
        per_rep = [run_replicate(cfg, r) for r in reps]
    else:
        size = max(1, math.ceil(len(reps) / (workers * 4)))
        chunks = [(cfg, reps[i:i + size]) for i in range(0, len(reps), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = [rows for chunk in pool.map(_run_chunk, chunks) for rows in chunk]
    return SimulationResult(cfg, [row for rows in per_rep for row in rows])


def coverage(result: SimulationResult, method_name: str) -> float:
    """Fraction of replicates whose sequence covered the true target at every m.

    For per-stratum methods pass the row label, e.g. ``"none:stratum2"``.
    """
    cfg = result.config
    base, _, suffix = method_name.rpartition(":stratum")
    if not base:
        base, suffix = method_name, ""
    method = next(m for m in cfg.methods if m.name == base)
    target = cfg.target(method, int(suffix) - 1 if suffix else None)
    missed = set()
    for name, rep, m, log10_e, lower, upper, rejected in result.rows:
        if name != method_name:
            continue
        lo, hi = float(lower), float(upper)
        if math.isnan(lo) or not lo - 1e-9 <= target <= hi + 1e-9:
            missed.add(rep)
    if cfg.replications == 0:
        return 1.0
    return 1.0 - len(missed) / cfg.replications
