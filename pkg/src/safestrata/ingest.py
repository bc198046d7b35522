"""Block assembly from raw outcome events, event-file I/O and synthetic streams.

Strata are 0-based inside the library.  The comma-separated event format uses
1-based stratum labels (``seq,stratum,group,outcome``); conversion happens in
:func:`read_events` and :func:`write_events`.
"""
from __future__ import annotations

import csv
import io
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import MalformedEvent
from .model import BlockCounts, BlockDesign, ThetaPair

EVENT_HEADER = ("seq", "stratum", "group", "outcome")
SCHEDULES = ("round-robin", "random")


@dataclass(frozen=True)
class OutcomeEvent:
    seq: int
    stratum: int
    group: str
    outcome: int

    def validate(self, n_strata: int | None = None) -> None:
        if self.group not in ("a", "b"):
            raise MalformedEvent(f"event {self.seq}: group must be 'a' or 'b', got {self.group!r}")
        if self.outcome not in (0, 1):
            raise MalformedEvent(f"event {self.seq}: outcome must be 0 or 1, got {self.outcome!r}")
        if self.stratum < 0 or (n_strata is not None and self.stratum >= n_strata):
            raise MalformedEvent(f"event {self.seq}: stratum {self.stratum} out of range")


@dataclass(frozen=True)
class Block:
    stratum: int
    counts: BlockCounts
    completed_at: int


@dataclass
class BlockStream:
    """Columnar block stream: the form every sequential routine consumes."""

    strata: np.ndarray
    s_a: np.ndarray
    s_b: np.ndarray
    design: BlockDesign = BlockDesign()
    n_strata: int = 1
    seed: int | None = None
    completed_at: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.strata = np.asarray(self.strata, dtype=np.int64).reshape(-1)
        self.s_a = np.asarray(self.s_a, dtype=np.int64).reshape(-1)
        self.s_b = np.asarray(self.s_b, dtype=np.int64).reshape(-1)
        if not (len(self.strata) == len(self.s_a) == len(self.s_b)):
            raise ValueError("strata, s_a and s_b must have equal length")
        if len(self.strata):
            if self.strata.min() < 0 or self.strata.max() >= self.n_strata:
                raise ValueError(f"stratum labels must lie in 0..{self.n_strata - 1}")
            if (self.s_a.min() < 0 or self.s_a.max() > self.design.n_a
                    or self.s_b.min() < 0 or self.s_b.max() > self.design.n_b):
                raise ValueError("block counts exceed the block design")

    def __len__(self) -> int:
        return len(self.strata)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Block], design: BlockDesign | None = None,
                    n_strata: int | None = None) -> BlockStream:
        blocks = list(blocks)
        if design is None:
            design = blocks[0].counts.design if blocks else BlockDesign()
        if n_strata is None:
            n_strata = max((b.stratum for b in blocks), default=0) + 1
        return cls(np.array([b.stratum for b in blocks], dtype=np.int64),
                   np.array([b.counts.s_a for b in blocks], dtype=np.int64),
                   np.array([b.counts.s_b for b in blocks], dtype=np.int64),
                   design, n_strata,
                   completed_at=np.array([b.completed_at for b in blocks], dtype=np.int64))

    def blocks(self) -> list[Block]:
        done = self.completed_at if self.completed_at is not None else np.arange(1, len(self) + 1)
        return [Block(int(k), BlockCounts(int(a), int(b), self.design), int(t))
                for k, a, b, t in zip(self.strata, self.s_a, self.s_b, done)]

    def head(self, m: int) -> BlockStream:
        return BlockStream(self.strata[:m], self.s_a[:m], self.s_b[:m], self.design,
                           self.n_strata, self.seed)

    def unstratified(self) -> BlockStream:
        """Same blocks with stratum labels erased (one pooled stratum)."""
        return BlockStream(np.zeros_like(self.strata), self.s_a, self.s_b, self.design, 1,
                           self.seed)

    def swapped(self) -> BlockStream:
        """Exchange the roles of groups a and b; risk differences change sign."""
        return BlockStream(self.strata, self.s_b, self.s_a, self.design.swapped(),
                           self.n_strata, self.seed)

    def counts_per_stratum(self) -> np.ndarray:
        return np.bincount(self.strata, minlength=self.n_strata)


def as_stream(blocks, design: BlockDesign | None = None,
              n_strata: int | None = None) -> BlockStream:
    if isinstance(blocks, BlockStream):
        if n_strata is not None and n_strata != blocks.n_strata:
            return BlockStream(blocks.strata, blocks.s_a, blocks.s_b, blocks.design, n_strata,
                               blocks.seed)
        return blocks
    return BlockStream.from_blocks(blocks, design, n_strata)


def assemble_blocks(events: Iterable[OutcomeEvent], design: BlockDesign,
                    n_strata: int | None = None) -> Iterator[Block]:
    """Group per-outcome events into completed blocks, in completion order.

    Each stratum keeps a queue per group.  A block is emitted as soon as both
    queues hold their quota, and it is stamped with the finishing event's
    ``seq``.  Outcomes left in unfinished blocks at the end are dropped.
    """
    queues: dict[int, tuple[deque, deque]] = {}
    last_seq = None
    for ev in events:
        ev.validate(n_strata)
        if last_seq is not None and ev.seq <= last_seq:
            raise MalformedEvent(f"event {ev.seq}: sequence numbers must increase")
        last_seq = ev.seq
        qa, qb = queues.setdefault(ev.stratum, (deque(), deque()))
        (qa if ev.group == "a" else qb).append(ev.outcome)
        if len(qa) >= design.n_a and len(qb) >= design.n_b:
            s_a = sum(qa.popleft() for _ in range(design.n_a))
            s_b = sum(qb.popleft() for _ in range(design.n_b))
            yield Block(ev.stratum, BlockCounts(s_a, s_b, design), ev.seq)


def read_events(source=None) -> list[OutcomeEvent]:
    """Parse an event table from a path, an open text file, or standard input."""
    if source is None or source == "-":
        return _parse_events(sys.stdin)
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            return _parse_events(fh)
    return _parse_events(source)


def _parse_events(fh) -> list[OutcomeEvent]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        return []
    if tuple(h.strip() for h in header) != EVENT_HEADER:
        raise MalformedEvent(f"line 1: expected header {','.join(EVENT_HEADER)}, got {header}")
    events = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise MalformedEvent(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            seq, stratum, outcome = int(row[0]), int(row[1]), int(row[3])
        except ValueError as exc:
            raise MalformedEvent(f"line {lineno}: {exc}") from None
        ev = OutcomeEvent(seq, stratum - 1, row[2].strip(), outcome)
        try:
            ev.validate()
        except MalformedEvent as exc:
            raise MalformedEvent(f"line {lineno}: {exc}") from None
        events.append(ev)
    return events


def write_events(events: Iterable[OutcomeEvent], fh=None) -> str | None:
    out = fh if fh is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(EVENT_HEADER)
    for ev in events:
        w.writerow((ev.seq, ev.stratum + 1, ev.group, ev.outcome))
    return out.getvalue() if fh is None else None


def blocks_to_events(stream: BlockStream) -> list[OutcomeEvent]:
    """Serialise blocks as events: group-a outcomes first, then group-b, block by block."""
    events = []
    seq = 1
    d = stream.design
    for k, sa, sb in zip(stream.strata, stream.s_a, stream.s_b):
        for group, s, n in (("a", sa, d.n_a), ("b", sb, d.n_b)):
            for i in range(n):
                events.append(OutcomeEvent(seq, int(k), group, int(i < s)))
                seq += 1
    return events


def _schedule(counts: Sequence[int], schedule: str, rng: np.random.Generator) -> np.ndarray:
    remaining = list(counts)
    order = []
    if schedule == "round-robin":
        while any(remaining):
            for k, left in enumerate(remaining):
                if left:
                    order.append(k)
                    remaining[k] -= 1
    elif schedule == "random":
        while any(remaining):
            live = [k for k, left in enumerate(remaining) if left]
            k = live[int(rng.integers(len(live)))]
            order.append(k)
            remaining[k] -= 1
    else:
        raise ValueError(f"unknown schedule {schedule!r}; choose from {SCHEDULES}")
    return np.asarray(order, dtype=np.int64)


def generate_stream(theta: Sequence, design: BlockDesign = BlockDesign(),
                    blocks_per_stratum: int | Sequence[int] = 40,
                    schedule: str = "round-robin", seed: int = 0) -> BlockStream:
    """Draw a synthetic block stream; deterministic given ``seed``.

    ``theta`` lists one ``ThetaPair`` (or ``(theta_a, theta_b)``) per stratum.
    Unequal ``blocks_per_stratum`` truncates the shorter strata, which simply
    drop out of the round-robin cycle once exhausted.
    """
    pairs = [t if isinstance(t, ThetaPair) else ThetaPair(*t) for t in theta]
    k = len(pairs)
    if isinstance(blocks_per_stratum, (int, np.integer)):
        blocks_per_stratum = [int(blocks_per_stratum)] * k
    if len(blocks_per_stratum) != k:
        raise ValueError("need one block count per stratum")
    rng = np.random.default_rng(seed)
    strata = _schedule(blocks_per_stratum, schedule, rng)
    ta = np.array([p.theta_a for p in pairs])[strata]
    tb = np.array([p.theta_b for p in pairs])[strata]
    s_a = rng.binomial(design.n_a, ta) if len(strata) else np.zeros(0, dtype=np.int64)
    s_b = rng.binomial(design.n_b, tb) if len(strata) else np.zeros(0, dtype=np.int64)
    return BlockStream(strata, s_a, s_b, design, k, seed)
