"""Post-processing of replayed timeslices: call-path merging and ranking."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .engine import ReplayStats, TimesliceRecord

# Aggregation key for slices that triggered without a recorded stack.
EMPTY_PATH: tuple[int, ...] = ()


@dataclass
class PathAggregate:
    """All triggered slices that share one exact call path.

    addr_freq counts every (address, provenance) occurrence across the
    member slices' samples.
    """

    path: tuple[int, ...]
    total_cmetric: float
    slice_count: int
    addr_freq: dict[tuple[int, str], int]


@dataclass
class Summary:
    total_slices: int
    critical_slices: int
    cr: float
    cr_percent: float
    per_thread: list[tuple[int, float]]  # (tid, cmetric), descending
    distinct_paths: int


def merge_paths(records: list[TimesliceRecord]) -> dict[tuple[int, ...], PathAggregate]:
    """Group triggered slices by identical call path.

    Paths merge only when their address sequences are element-wise equal;
    a path that is a prefix of another stays separate, since a switch may
    land mid-way through a function that indirectly calls the real
    bottleneck.  Slices with no recorded stack land under EMPTY_PATH.
    Non-triggered records are ignored.  Member cmetrics are summed with
    math.fsum, so the result is independent of input order.
    """
    groups: dict[tuple[int, ...], list[TimesliceRecord]] = {}
    for rec in sorted(records, key=lambda r: r.ts_id):
        if rec.triggered:
            groups.setdefault(rec.stack, []).append(rec)
    merged = {}
    for path, members in groups.items():
        freq: Counter = Counter()
        for rec in members:
            freq.update(rec.samples)
        merged[path] = PathAggregate(path=path,
                                     total_cmetric=math.fsum(r.cmetric
                                                             for r in members),
                                     slice_count=len(members),
                                     addr_freq=dict(freq))
    return merged


def rank_top_n(aggs: dict[tuple[int, ...], PathAggregate],
               n: int) -> list[PathAggregate]:
    """The n paths with the largest summed cmetric, descending.

    Ties break on lexicographic address order so output is deterministic;
    fewer than n aggregates yields them all.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ranked = sorted(aggs.values(), key=lambda a: (-a.total_cmetric, a.path))
    return ranked[:n]


def compute_summary(stats: ReplayStats,
                    aggs: dict[tuple[int, ...], PathAggregate]) -> Summary:
    """Slice counts, critical ratio and the per-thread cmetric table."""
    per_thread = sorted(stats.cm_hash.items(), key=lambda kv: (-kv[1], kv[0]))
    return Summary(total_slices=stats.total_slices,
                   critical_slices=stats.critical_slices,
                   cr=stats.cr,
                   cr_percent=stats.cr * 100.0,
                   per_thread=per_thread,
                   distinct_paths=len(aggs))
