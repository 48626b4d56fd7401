"""Trace replay engine: active-thread accounting and per-timeslice criticality.

The criticality metric (cmetric) of an on-cpu timeslice is the sum, over
the intervals between scheduler state changes that the slice spans, of
interval_length / active_thread_count.  Long stretches executed while few
threads are active weigh heavily, which is what makes serialization
bottlenecks stand out.

The engine maintains one global running sum incrementally (a single
update per event, then a subtraction per slice) instead of touching every
thread per interval.  `oracle_cmetric` recomputes the same quantity the
direct per-interval way and exists purely to cross-check the incremental
path.

Internally the running sum is kept as an exact integer numerator over a
fixed denominator (lcm of the possible active counts), so the subtraction
at slice close never suffers cancellation; values become floats only at
the edge.  The time-weighted active-count average used for the trigger
decision is likewise kept in exact integers until one final division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

from .trace import (
    BLOCKED,
    Sample,
    SchedSwitch,
    SchedWakeup,
    TaskExit,
    TaskNew,
    TraceConsistencyError,
    TraceEvent,
)

# Provenance tags on recorded instruction pointers.
SAMPLE = "sample"      # gated in by the periodic sampler
STACKTOP = "stacktop"  # fallback: innermost stack frame of the slice


class ThreadState(Enum):
    INACTIVE = "inactive"
    RUNNABLE = "runnable"
    RUNNING = "running"


@dataclass(frozen=True)
class Config:
    """Replay parameters.

    n_min is the parallelism threshold: a slice whose time-weighted
    average active-thread count falls below it is critical.  None means
    "half of the currently live thread count", re-evaluated at each
    comparison; an integer pins a fixed threshold.  stack_depth caps how
    many innermost frames a critical slice keeps.  sample_period_ns is
    the sampler tick, used by the synthetic trace generator.
    """

    n_min: int | None = None
    stack_depth: int = 16
    sample_period_ns: int = 3_000_000

    def __post_init__(self):
        if self.n_min is not None and self.n_min < 1:
            raise ValueError(f"n_min must be >= 1, got {self.n_min}")
        if self.stack_depth < 1:
            raise ValueError(f"stack_depth must be >= 1, got {self.stack_depth}")
        if self.sample_period_ns < 1:
            raise ValueError("sample_period_ns must be >= 1")

    def nmin_ratio(self, total_count: int) -> tuple[int, int]:
        """The threshold as an exact (numerator, denominator) pair."""
        if self.n_min is not None:
            return self.n_min, 1
        return total_count, 2


@dataclass(frozen=True, slots=True)
class TimesliceRecord:
    """One closed on-cpu slice of an application thread.

    stack holds at most stack_depth innermost frames and is non-empty
    only for triggered slices; samples pairs each recorded instruction
    pointer with its provenance (SAMPLE or STACKTOP).  threads_av is the
    time-weighted average active-thread count across the slice;
    thread_count_out is the instantaneous active count when the slice
    closed (the owning thread still counted).
    """

    ts_id: int
    tid: int
    t_in: int
    t_out: int
    cmetric: float
    threads_av: float
    triggered: bool
    stack: tuple[int, ...]
    samples: tuple[tuple[int, str], ...]
    thread_count_out: int


@dataclass
class ReplayStats:
    total_slices: int
    critical_slices: int
    cr: float
    cm_hash: dict[int, float]
    span_ns: int
    events: int


class _OpenSlice:
    """Per-thread snapshot taken at switch-in."""

    __slots__ = ("cm_num", "nt", "t_in", "samples")

    def __init__(self, cm_num: int, nt: int, t_in: int):
        self.cm_num = cm_num
        self.nt = nt
        self.t_in = t_in
        self.samples: list[int] = []


# Covers active counts 1..64 without rescaling; larger counts grow it.
_BASE_DEN = math.lcm(*range(1, 65))


class ReplayEngine:
    """Single-pass, single-trace state machine over scheduler events.

    Tracks per-thread run state, the live and active thread counts, and
    the global criticality accumulators; emits a TimesliceRecord whenever
    a running application thread is switched out (or exits / the trace
    ends while it is on cpu).
    """

    def __init__(self, cfg: Config | None = None):
        self.cfg = cfg or Config()
        self.thread_state: dict[int, ThreadState] = {}
        self.thread_count = 0  # app threads runnable or running
        self.total_count = 0   # live app threads
        self.t_switch = 0      # timestamp of the latest interval boundary
        self.global_nt = 0     # exact sum of interval_len * active_count
        self.cm_hash: dict[int, float] = {}
        self._cm_num = 0       # global_cm numerator over _cm_den
        self._cm_den = _BASE_DEN
        self._quot = {n: _BASE_DEN // n for n in range(1, 65)}
        self._open: dict[int, _OpenSlice] = {}
        self._next_ts_id = 1

    @property
    def global_cm(self) -> float:
        """Cumulative sum of interval_len / active_count, in ns."""
        return self._cm_num / self._cm_den

    def _quotient(self, n: int) -> int:
        q = self._quot.get(n)
        if q is None:
            # Rescale the numerator (and every open snapshot) so the
            # denominator also divides by n.  Only reachable past 64
            # concurrently active threads.
            new_den = math.lcm(self._cm_den, n)
            factor = new_den // self._cm_den
            if factor != 1:
                self._cm_num *= factor
                for snap in self._open.values():
                    snap.cm_num *= factor
                for k in self._quot:
                    self._quot[k] *= factor
                self._cm_den = new_den
            q = self._quot[n] = self._cm_den // n
        return q

    def advance_interval(self, t: int) -> None:
        """Accrue the interval [t_switch, t) into the global accumulators.

        Intervals with no active thread contribute nothing (there is no
        parallelism to account); t_switch moves to t in every case.
        """
        if t < self.t_switch:
            raise TraceConsistencyError(
                f"timestamp regression ({t} < {self.t_switch})"
            )
        dt = t - self.t_switch
        if dt and self.thread_count:
            self._cm_num += dt * self._quotient(self.thread_count)
            self.global_nt += dt * self.thread_count
        self.t_switch = t

    def apply(self, ev: TraceEvent, index: int | None = None):
        """Advance to ev.ts, then apply the event.

        Returns the TimesliceRecord closed by this event, if any.
        Raises TraceConsistencyError when the event contradicts tracked
        state (e.g. switching out a thread that is not on cpu), which
        signals a corrupt or truncated trace.
        """
        self.advance_interval(ev.ts)

        if isinstance(ev, Sample):
            snap = self._open.get(ev.tid)
            if snap is not None:
                # Strictly below the threshold, evaluated at the sample
                # instant; samples taken at higher parallelism are noise.
                num, den = self.cfg.nmin_ratio(self.total_count)
                if self.thread_count * den < num:
                    snap.samples.append(ev.ip)
            return None

        if isinstance(ev, SchedSwitch):
            record = None
            prev = self.thread_state.get(ev.prev_tid)
            if prev is not None:
                if prev is not ThreadState.RUNNING:
                    raise TraceConsistencyError(
                        f"{self._at(index)}switch-out of tid {ev.prev_tid}"
                        f" which is {prev.value}, not on cpu"
                    )
                record = self._close(ev.prev_tid, ev.ts, ev.stack)
                if ev.prev_state == BLOCKED:
                    self.thread_state[ev.prev_tid] = ThreadState.INACTIVE
                    self.thread_count -= 1
                else:
                    self.thread_state[ev.prev_tid] = ThreadState.RUNNABLE
            nxt = self.thread_state.get(ev.next_tid)
            if nxt is not None:
                if nxt is ThreadState.RUNNING:
                    raise TraceConsistencyError(
                        f"{self._at(index)}switch-in of tid {ev.next_tid}"
                        " which is already on cpu"
                    )
                if nxt is ThreadState.INACTIVE:
                    self.thread_count += 1
                self.thread_state[ev.next_tid] = ThreadState.RUNNING
                self._open[ev.next_tid] = _OpenSlice(self._cm_num,
                                                     self.global_nt, ev.ts)
            return record

        if isinstance(ev, SchedWakeup):
            if self.thread_state.get(ev.tid) is ThreadState.INACTIVE:
                self.thread_state[ev.tid] = ThreadState.RUNNABLE
                self.thread_count += 1
            return None

        if isinstance(ev, TaskNew):
            if ev.tid in self.thread_state:
                raise TraceConsistencyError(
                    f"{self._at(index)}TaskNew for tid {ev.tid}"
                    " which is already live"
                )
            self.thread_state[ev.tid] = ThreadState.INACTIVE
            self.total_count += 1
            self.cm_hash.setdefault(ev.tid, 0.0)
            return None

        if isinstance(ev, TaskExit):
            state = self.thread_state.pop(ev.tid, None)
            if state is None:
                raise TraceConsistencyError(
                    f"{self._at(index)}TaskExit for tid {ev.tid}"
                    " without TaskNew"
                )
            record = None
            if state is ThreadState.RUNNING:
                # A thread that dies on cpu still owns its final slice;
                # close it here so no accrued criticality is dropped.
                record = self._close(ev.tid, ev.ts, None)
            if state is not ThreadState.INACTIVE:
                self.thread_count -= 1
            self.total_count -= 1
            return record

        raise TraceConsistencyError(f"{self._at(index)}unknown event {ev!r}")

    @staticmethod
    def _at(index: int | None) -> str:
        return f"event {index}: " if index is not None else ""

    def _close(self, tid: int, t_out: int,
               stack: tuple[int, ...] | None) -> TimesliceRecord:
        """Close tid's open slice at t_out (accumulators already there).

        cmetric is the exact difference of the global accumulator against
        the switch-in snapshot.  The trigger comparison threads_av < n_min
        is done in integers so it cannot flip on float rounding.  A
        triggered slice keeps its truncated stack and gated samples; with
        no samples, an active count at close still at or below the
        threshold, and a non-empty stack, the innermost frame is recorded
        instead, tagged STACKTOP.  Zero-length slices are emitted for
        bookkeeping but are never triggered.
        """
        snap = self._open.pop(tid)
        cmetric = (self._cm_num - snap.cm_num) / self._cm_den
        self.cm_hash[tid] += cmetric
        tcount = self.thread_count
        num, den = self.cfg.nmin_ratio(self.total_count)
        length = t_out - snap.t_in
        if length == 0:
            threads_av = float(tcount)
            triggered = False
        else:
            av_num = self.global_nt - snap.nt
            threads_av = av_num / length
            triggered = av_num * den < num * length
        if triggered:
            if stack and len(stack) > self.cfg.stack_depth:
                kept = tuple(stack[: self.cfg.stack_depth])
            else:
                kept = tuple(stack) if stack else ()
            samples = tuple((ip, SAMPLE) for ip in snap.samples)
            if not samples and tcount * den <= num and kept:
                samples = ((kept[0], STACKTOP),)
        else:
            kept = ()
            samples = ()
        record = TimesliceRecord(ts_id=self._next_ts_id, tid=tid,
                                 t_in=snap.t_in, t_out=t_out, cmetric=cmetric,
                                 threads_av=threads_av, triggered=triggered,
                                 stack=kept, samples=samples,
                                 thread_count_out=tcount)
        self._next_ts_id += 1
        return record

    def finish(self, t_end: int) -> list[TimesliceRecord]:
        """Close every thread still on cpu at the end of the trace."""
        self.advance_interval(t_end)
        return [self._close(tid, t_end, None) for tid in sorted(self._open)]


def run_replay(events: Iterable[TraceEvent],
               cfg: Config | None = None) -> tuple[list[TimesliceRecord], ReplayStats]:
    """Replay a full (validated) trace and collect slices plus totals.

    Threads still running at the last event are closed at its timestamp.
    CR is the fraction of slices that triggered; 0 for an empty trace.
    """
    engine = ReplayEngine(cfg)
    records: list[TimesliceRecord] = []
    first_ts: int | None = None
    last_ts = 0
    count = 0
    for i, ev in enumerate(events):
        count += 1
        if first_ts is None:
            first_ts = ev.ts
        last_ts = ev.ts
        record = engine.apply(ev, index=i)
        if record is not None:
            records.append(record)
    if first_ts is not None:
        records.extend(engine.finish(last_ts))
    critical = sum(1 for r in records if r.triggered)
    stats = ReplayStats(total_slices=len(records), critical_slices=critical,
                        cr=critical / len(records) if records else 0.0,
                        cm_hash=dict(engine.cm_hash),
                        span_ns=(last_ts - first_ts) if first_ts is not None else 0,
                        events=count)
    return records, stats


def iter_activity(events: Iterable[TraceEvent]) -> Iterator[tuple[int, int, tuple[int, ...], int]]:
    """Yield (t0, t1, running_tids, active_count) for every interval.

    Reference reconstruction used by the oracle and by tests: thread
    states are tracked in a plain dict and the active count is recounted
    from scratch for each interval rather than maintained incrementally.
    Boundaries fall on every event timestamp.
    """
    state: dict[int, ThreadState] = {}
    prev_ts: int | None = None
    for i, ev in enumerate(events):
        if prev_ts is not None and ev.ts > prev_ts:
            running = tuple(t for t, s in state.items()
                            if s is ThreadState.RUNNING)
            active = sum(1 for s in state.values()
                         if s is not ThreadState.INACTIVE)
            yield prev_ts, ev.ts, running, active
        prev_ts = ev.ts

        if isinstance(ev, TaskNew):
            if ev.tid in state:
                raise TraceConsistencyError(
                    f"event {i}: TaskNew for live tid {ev.tid}")
            state[ev.tid] = ThreadState.INACTIVE
        elif isinstance(ev, TaskExit):
            if ev.tid not in state:
                raise TraceConsistencyError(
                    f"event {i}: TaskExit for unknown tid {ev.tid}")
            del state[ev.tid]
        elif isinstance(ev, SchedSwitch):
            prev = state.get(ev.prev_tid)
            if prev is not None:
                if prev is not ThreadState.RUNNING:
                    raise TraceConsistencyError(
                        f"event {i}: switch-out of tid {ev.prev_tid}"
                        " which is not on cpu")
                state[ev.prev_tid] = (ThreadState.RUNNABLE
                                      if ev.prev_state != BLOCKED
                                      else ThreadState.INACTIVE)
            if ev.next_tid in state:
                if state[ev.next_tid] is ThreadState.RUNNING:
                    raise TraceConsistencyError(
                        f"event {i}: switch-in of tid {ev.next_tid}"
                        " which is already on cpu")
                state[ev.next_tid] = ThreadState.RUNNING
        elif isinstance(ev, SchedWakeup):
            if state.get(ev.tid) is ThreadState.INACTIVE:
                state[ev.tid] = ThreadState.RUNNABLE


def oracle_cmetric(events: Iterable[TraceEvent]) -> dict[int, float]:
    """Per-thread criticality computed straight from the definition.

    Walks every interval, divides its length by the number of active
    threads, and credits each thread that was on cpu.  Deliberately
    ignores the incremental accumulators; this is the reference the
    engine is checked against.
    """
    events = list(events)
    totals = {ev.tid: 0.0 for ev in events if isinstance(ev, TaskNew)}
    for t0, t1, running, active in iter_activity(events):
        if running:
            share = (t1 - t0) / active
            for tid in running:
                totals[tid] += share
    return totals


def active_span(events: Iterable[TraceEvent]) -> int:
    """Total duration of intervals with at least one active thread."""
    return sum(t1 - t0 for t0, t1, _, active in iter_activity(events) if active)
