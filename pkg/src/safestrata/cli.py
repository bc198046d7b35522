"""Command-line front end: ``safestrata test | confseq | simulate``.

Every shared option can also be set through an environment variable named
``SAFESTRATA_`` plus the option name in upper case with dashes as underscores
(``SAFESTRATA_ALPHA``, ``SAFESTRATA_GRID_STEP``, ...).  Command-line flags win.
Errors exit with status 1 (2 for usage errors); a test that does not reject is
not an error.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import warnings
from contextlib import contextmanager
from dataclasses import replace

from . import confseq as cs
from .eprocess import CombinerSpec, TestConfig, test_global_null
from .errors import EmptyConfidenceSet
from .ingest import BlockStream, assemble_blocks, read_events
from .learners import CrossTalkMode
from .model import BlockDesign
from .simulate import load_config, parse_switch_prior, run_simulation

ENV_PREFIX = "SAFESTRATA_"
COMBINERS = ("multiply", "mixture", "pseudo-bayes", "switch", "min")
CROSSTALK = tuple(m.value for m in CrossTalkMode)
TARGETS = ("per-stratum", "min", "max", "mean")


def _alpha(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {v:g}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v:g}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _grid_step(text):
    v = _positive_float(text)
    try:
        cs.delta_grid(v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return v


def _switch_prior(text):
    try:
        return parse_switch_prior(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _weights(text):
    try:
        w = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be comma-separated numbers: {text!r}") \
            from None
    try:
        cs.StratumWeights(w)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return w


def _common(p: argparse.ArgumentParser, *, method=True, stream=True):
    # without a stream the values come from a config file unless overridden
    p.add_argument("--alpha", type=_alpha, default=0.05 if stream else None,
                   help="level, in (0, 1) [0.05]")
    if not stream:
        p.add_argument("--seed", type=int, default=None, help="base random seed")
    p.add_argument("--out", default=None, help="write the table here instead of stdout")
    p.add_argument("--grid-step", type=_grid_step, default=cs.DEFAULT_STEP if stream else None,
                   help="delta grid step over [-1, 1] [0.01]")
    if method:
        p.add_argument("--combiner", choices=COMBINERS, default="multiply")
        p.add_argument("--eta", type=_positive_float, default=1.0,
                       help="pseudo-Bayes learning rate [1]")
        sw = p.add_mutually_exclusive_group()
        sw.add_argument("--switch-at", type=_positive_int, default=None,
                        help="fixed switch block for --combiner switch")
        sw.add_argument("--switch-prior", type=_switch_prior, default=None,
                        metavar="uniform:LO:HI", help="uniform prior over switch blocks")
        p.add_argument("--crosstalk", choices=CROSSTALK, default="none")
    if stream:
        p.add_argument("events", nargs="?", default="-",
                       help="event file with header seq,stratum,group,outcome ('-' = stdin)")
        p.add_argument("--strata", type=_positive_int, default=None,
                       help="number of strata (default: largest label seen)")
        p.add_argument("--n-a", type=_positive_int, default=1, help="group-a outcomes per block")
        p.add_argument("--n-b", type=_positive_int, default=1, help="group-b outcomes per block")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safestrata",
        description="Anytime-valid tests and confidence sequences for stratified 2x2 data.")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="sequential test of no effect in any stratum")
    _common(t)
    t.add_argument("--unstratified", action="store_true",
                   help="ignore stratum labels (single pooled e-process)")
    t.set_defaults(func=cmd_test)

    c = sub.add_parser("confseq", help="confidence sequences for risk differences")
    _common(c)
    c.add_argument("--target", choices=TARGETS, default="per-stratum")
    c.add_argument("--weights", type=_weights, default=None,
                   help="stratum proportions for --target mean, e.g. 0.3,0.7")
    c.add_argument("--split-alpha", action="store_true",
                   help="run each one-sided bound at alpha/2 (min and max targets)")
    c.set_defaults(func=cmd_confseq)

    s = sub.add_parser("simulate", help="Monte-Carlo experiment from a config file")
    _common(s, method=False, stream=False)
    s.add_argument("config", help="config path, or the name of a bundled config (e.g. fig2)")
    s.add_argument("--replications", type=int, default=None)
    s.add_argument("--workers", type=_positive_int, default=None,
                   help="worker processes [available CPUs]")
    s.add_argument("--summary", default=None,
                   help="write aggregate rows here (default: stdout)")
    s.set_defaults(func=cmd_simulate)

    for p in (t, c, s):
        _apply_env(p)
    return parser


def _apply_env(parser: argparse.ArgumentParser) -> None:
    # string defaults go through each option's type converter, so env values are validated
    for action in parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        value = os.environ.get(ENV_PREFIX + action.dest.upper())
        if value is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = value.strip().lower() in ("1", "true", "yes", "on")
        else:
            action.default = value


@contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _combiner(args) -> CombinerSpec:
    return CombinerSpec(args.combiner, eta=args.eta, switch_at=args.switch_at,
                        switch_range=args.switch_prior)


def _load_stream(args) -> BlockStream:
    events = read_events(args.events)
    design = BlockDesign(args.n_a, args.n_b)
    seen = max((e.stratum for e in events), default=-1) + 1
    n_strata = args.strata if args.strata is not None else max(seen, 1)
    if seen > n_strata:
        raise ValueError(f"events mention stratum {seen} but --strata is {n_strata}")
    blocks = list(assemble_blocks(events, design, n_strata))
    return BlockStream.from_blocks(blocks, design, n_strata)


def cmd_test(args) -> int:
    stream = _load_stream(args)
    config = TestConfig(_combiner(args), CrossTalkMode.parse(args.crosstalk), args.alpha,
                        stratified=not args.unstratified)
    trace = test_global_null(stream, config)
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("m", "log10_e"))
        for m, v in enumerate(trace.log_e):
            w.writerow((m, f"{v / math.log(10):.6f}"))
        if fh is sys.stdout:
            print(trace.verdict(), file=fh)
    if args.out not in (None, "-"):
        print(trace.verdict())
    return 0


def cmd_confseq(args) -> int:
    stream = _load_stream(args)
    mode = CrossTalkMode.parse(args.crosstalk)
    common = dict(alpha=args.alpha, grid_step=args.grid_step, mode=mode)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyConfidenceSet)
        if args.target == "per-stratum":
            per = cs.cs_all_strata(stream, **common)
            rows = [(m, f"stratum{k + 1}", series[m])
                    for m in range(len(stream) + 1) for k, series in enumerate(per)]
        elif args.target == "mean":
            if args.weights is None:
                raise ValueError("--target mean needs --weights")
            if len(args.weights) != stream.n_strata:
                raise ValueError(f"{len(args.weights)} weights for {stream.n_strata} strata")
            rows = [(iv.time, "mean", iv) for iv in
                    cs.cs_mean_effect(stream, args.weights, **common)]
        else:
            fn = cs.cs_min_two_sided if args.target == "min" else cs.cs_max_two_sided
            rows = [(iv.time, args.target, iv) for iv in
                    fn(stream, _combiner(args), split_alpha=args.split_alpha, **common)]
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("m", "target", "lower", "upper"))
        for m, target, iv in rows:
            if iv.empty:
                w.writerow((m, target, "nan", "nan"))
            else:
                w.writerow((m, target, f"{iv.lower:.6g}", f"{iv.upper:.6g}"))
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.replications is not None and args.replications < 0:
        raise ValueError("--replications must be >= 0")
    if args.grid_step is not None:
        cfg = replace(cfg, grid_step=args.grid_step)
    result = run_simulation(cfg, workers=args.workers, replications=args.replications,
                            seed=args.seed, alpha=args.alpha)
    if args.out is not None:
        with _output(args.out) as fh:
            fh.write(result.long_table())
    with _output(args.summary) as fh:
        fh.write(result.summary_table())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"safestrata {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
