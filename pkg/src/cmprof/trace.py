"""Scheduler trace event model, JSONL trace format, and validation.

A trace is a sequence of timestamped events on a single monotonic clock
(integer nanoseconds): thread creation/exit, context switches, wakeups
and instruction-pointer samples.  Trace files are UTF-8 JSON Lines, one
event per line, with an optional "#cmprof-trace v1" header line.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Union

log = logging.getLogger("cmprof")

TRACE_HEADER = "#cmprof-trace v1"

# prev_state values on a context switch: a preempted thread is still
# runnable ("R"); any other departure counts as blocked ("B").
RUNNABLE = "R"
BLOCKED = "B"


class TraceError(Exception):
    """Base class for trace format and consistency failures."""


class TraceParseError(TraceError):
    """A trace line could not be decoded into an event."""


class TraceConsistencyError(TraceError):
    """The event stream violates ordering or thread-lifecycle rules."""


@dataclass(frozen=True, slots=True)
class TaskNew:
    """An application thread came into existence.  tid must be >= 1."""

    ts: int
    tid: int
    comm: str


@dataclass(frozen=True, slots=True)
class TaskExit:
    ts: int
    tid: int


@dataclass(frozen=True, slots=True)
class SchedSwitch:
    """Context switch on one cpu.

    tid 0 stands for idle or threads outside the traced application, so
    switches to/from foreign work are representable.  `stack` is the
    departing thread's call stack, innermost frame first; it is optional
    and the replay engine decides whether to keep it.
    """

    ts: int
    cpu: int
    prev_tid: int
    prev_state: str  # RUNNABLE or BLOCKED
    next_tid: int
    stack: tuple[int, ...] | None = None


@dataclass(frozen=True, slots=True)
class SchedWakeup:
    ts: int
    tid: int


@dataclass(frozen=True, slots=True)
class Sample:
    """Periodic instruction-pointer sample attributed to a thread."""

    ts: int
    tid: int
    ip: int


TraceEvent = Union[TaskNew, TaskExit, SchedSwitch, SchedWakeup, Sample]


@dataclass
class TraceStats:
    """Per-kind event counts and basic shape facts for one trace."""

    new: int = 0
    exit: int = 0
    switch: int = 0
    wakeup: int = 0
    sample: int = 0
    app_tids: set[int] = None
    first_ts: int | None = None
    last_ts: int | None = None
    redundant_wakeups: int = 0

    def __post_init__(self):
        if self.app_tids is None:
            self.app_tids = set()

    @property
    def events(self) -> int:
        return self.new + self.exit + self.switch + self.wakeup + self.sample

    @property
    def span_ns(self) -> int:
        if self.first_ts is None:
            return 0
        return self.last_ts - self.first_ts


def _where(lineno: int | None) -> str:
    return f"line {lineno}: " if lineno is not None else ""


def _get_int(obj: dict, field: str, lineno: int | None, minimum: int = 0) -> int:
    if field not in obj:
        raise TraceParseError(f'{_where(lineno)}missing field "{field}"')
    val = obj[field]
    if not isinstance(val, int) or isinstance(val, bool):
        raise TraceParseError(f'{_where(lineno)}field "{field}" must be an integer')
    if val < minimum:
        raise TraceParseError(
            f'{_where(lineno)}field "{field}" must be >= {minimum}, got {val}'
        )
    return val


def _get_str(obj: dict, field: str, lineno: int | None) -> str:
    if field not in obj:
        raise TraceParseError(f'{_where(lineno)}missing field "{field}"')
    val = obj[field]
    if not isinstance(val, str):
        raise TraceParseError(f'{_where(lineno)}field "{field}" must be a string')
    return val


def parse_event(line: str, lineno: int | None = None) -> TraceEvent:
    """Decode one JSONL trace line into its event.

    Raises TraceParseError (naming the line number when given and the
    offending field) on malformed JSON, unknown event tags, missing or
    ill-typed fields.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"{_where(lineno)}malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise TraceParseError(f"{_where(lineno)}event must be a JSON object")

    kind = _get_str(obj, "ev", lineno)
    ts = _get_int(obj, "ts", lineno)

    if kind == "new":
        return TaskNew(ts=ts, tid=_get_int(obj, "tid", lineno, minimum=1),
                       comm=_get_str(obj, "comm", lineno))
    if kind == "exit":
        return TaskExit(ts=ts, tid=_get_int(obj, "tid", lineno, minimum=1))
    if kind == "switch":
        state = _get_str(obj, "prev_state", lineno)
        if state not in (RUNNABLE, BLOCKED):
            raise TraceParseError(
                f'{_where(lineno)}field "prev_state" must be "R" or "B", got {state!r}'
            )
        stack = None
        if "stack" in obj:
            raw = obj["stack"]
            if not isinstance(raw, list) or any(
                not isinstance(a, int) or isinstance(a, bool) or a < 0 for a in raw
            ):
                raise TraceParseError(
                    f'{_where(lineno)}field "stack" must be an array of'
                    " non-negative integers"
                )
            stack = tuple(raw)
        return SchedSwitch(ts=ts, cpu=_get_int(obj, "cpu", lineno),
                           prev_tid=_get_int(obj, "prev", lineno),
                           prev_state=state,
                           next_tid=_get_int(obj, "next", lineno),
                           stack=stack)
    if kind == "wakeup":
        return SchedWakeup(ts=ts, tid=_get_int(obj, "tid", lineno, minimum=1))
    if kind == "sample":
        return Sample(ts=ts, tid=_get_int(obj, "tid", lineno, minimum=1),
                      ip=_get_int(obj, "ip", lineno))
    raise TraceParseError(f'{_where(lineno)}unknown event tag "{kind}"')


def serialize_event(ev: TraceEvent) -> str:
    """Encode an event as one JSONL line, byte-stable.

    Key order is fixed: "ev" and "ts" first, then per-event fields in
    their natural order (new: tid, comm; switch: cpu, prev, prev_state,
    next, stack; wakeup/exit: tid; sample: tid, ip).  Round-trips with
    parse_event.
    """
    if isinstance(ev, TaskNew):
        obj = {"ev": "new", "ts": ev.ts, "tid": ev.tid, "comm": ev.comm}
    elif isinstance(ev, TaskExit):
        obj = {"ev": "exit", "ts": ev.ts, "tid": ev.tid}
    elif isinstance(ev, SchedSwitch):
        obj = {"ev": "switch", "ts": ev.ts, "cpu": ev.cpu, "prev": ev.prev_tid,
               "prev_state": ev.prev_state, "next": ev.next_tid}
        if ev.stack is not None:
            obj["stack"] = list(ev.stack)
    elif isinstance(ev, SchedWakeup):
        obj = {"ev": "wakeup", "ts": ev.ts, "tid": ev.tid}
    elif isinstance(ev, Sample):
        obj = {"ev": "sample", "ts": ev.ts, "tid": ev.tid, "ip": ev.ip}
    else:
        raise TypeError(f"not a trace event: {ev!r}")
    return json.dumps(obj, separators=(",", ":"))


def validate_trace(events: Iterable[TraceEvent]) -> TraceStats:
    """Check stream-level rules and return per-kind counts.

    Rules, reported with the index of the first violating event:
      - timestamps are non-decreasing (equal timestamps are legal and
        keep file order);
      - every nonzero switch prev/next tid refers to a live application
        thread (introduced by TaskNew, not yet exited);
      - TaskExit only for live threads; TaskNew never for a tid that is
        currently live.

    Wakeups for already-active threads are legal but counted in
    redundant_wakeups and noted on the log, since they would behave
    differently under an activate-on-wakeup-only reading of the wakeup
    rule.
    """
    stats = TraceStats()
    live: dict[int, bool] = {}  # tid -> active (runnable or running)
    prev_ts: int | None = None

    for i, ev in enumerate(events):
        if prev_ts is not None and ev.ts < prev_ts:
            raise TraceConsistencyError(
                f"event {i}: timestamp regression ({ev.ts} < {prev_ts})"
            )
        prev_ts = ev.ts
        if stats.first_ts is None:
            stats.first_ts = ev.ts
        stats.last_ts = ev.ts

        if isinstance(ev, TaskNew):
            if ev.tid in live:
                raise TraceConsistencyError(
                    f"event {i}: TaskNew for tid {ev.tid} which is already live"
                )
            live[ev.tid] = False
            stats.app_tids.add(ev.tid)
            stats.new += 1
        elif isinstance(ev, TaskExit):
            if ev.tid not in live:
                raise TraceConsistencyError(
                    f"event {i}: TaskExit for tid {ev.tid} without TaskNew"
                )
            del live[ev.tid]
            stats.exit += 1
        elif isinstance(ev, SchedSwitch):
            for field, tid in (("prev", ev.prev_tid), ("next", ev.next_tid)):
                if tid != 0 and tid not in live:
                    raise TraceConsistencyError(
                        f"event {i}: switch {field} tid {tid} is not a live"
                        " application thread"
                    )
            if ev.prev_tid != 0:
                live[ev.prev_tid] = ev.prev_state == RUNNABLE
            if ev.next_tid != 0:
                live[ev.next_tid] = True
            stats.switch += 1
        elif isinstance(ev, SchedWakeup):
            if live.get(ev.tid):
                stats.redundant_wakeups += 1
            elif ev.tid in live:
                live[ev.tid] = True
            stats.wakeup += 1
        elif isinstance(ev, Sample):
            stats.sample += 1
        else:
            raise TraceConsistencyError(f"event {i}: unknown event {ev!r}")

    if stats.redundant_wakeups:
        log.info("trace contains %d wakeup(s) for already-active threads",
                 stats.redundant_wakeups)
    return stats


def read_trace_file(path: str) -> list[TraceEvent]:
    """Load a JSONL trace file, checking the version header if present.

    Lines starting with "#" are comments and are skipped; a first
    comment of the form "#cmprof-trace vN" must name a supported
    version.  Headerless plain JSONL is accepted.
    """
    events: list[TraceEvent] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#cmprof-trace") and line != TRACE_HEADER:
                    raise TraceParseError(
                        f"{path}: unsupported trace version {line!r}"
                        f" (expected {TRACE_HEADER!r})"
                    )
                continue
            try:
                events.append(parse_event(line, lineno))
            except TraceParseError as exc:
                raise TraceParseError(f"{path}: {exc}") from None
    return events


def write_trace_file(path: str, events: Iterable[TraceEvent]) -> None:
    """Write events as a versioned JSONL trace file."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(TRACE_HEADER + "\n")
        for ev in events:
            f.write(serialize_event(ev) + "\n")
