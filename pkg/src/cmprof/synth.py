"""Deterministic scheduler-trace generator with known ground truth.

Each scenario lays out a handful of synthetic functions in a fake address
space, constructs every thread's on-cpu windows analytically, and derives
three artifacts from the same construction: the event trace, the symbol
map, and a GroundTruth record (per-thread cmetric, expected top call
path, expected critical ratio) computed by a direct sweep over the
constructed windows.  The sweep never touches the replay engine, so
replaying the trace is a real cross-check.

Scenario kinds:
  serial    - all threads run a parallel region, then one thread runs a
              serial function while the rest are blocked.
  balanced  - every thread runs independent work of equal length.
  convoy    - threads take turns in a critical section under mutual
              exclusion (waiters blocked), optionally doing some
              parallel work after each turn.
  pipeline  - staged workers with fixed service times, each stage
              blocking when its input queue is empty.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction

from .engine import Config
from .symbols import SymbolEntry, SymbolMap, write_symbol_map
from .trace import (
    BLOCKED,
    RUNNABLE,
    Sample,
    SchedSwitch,
    SchedWakeup,
    TaskExit,
    TaskNew,
    TraceEvent,
    write_trace_file,
)

KINDS = ("serial", "balanced", "convoy", "pipeline")

_FUNC_BASE = 0x400000
_FUNC_SIZE = 0x1000
_FRAME_OFF = 0x40  # representative in-function address used in stacks


class ScenarioError(ValueError):
    """Scenario parameters are invalid."""


@dataclass(frozen=True)
class _Func:
    name: str
    file: str
    line: int
    base: int

    @property
    def frame(self) -> int:
        return self.base + _FRAME_OFF

    def entry(self) -> SymbolEntry:
        return SymbolEntry(start=self.base, end=self.base + _FUNC_SIZE,
                           func=self.name, file=self.file, line=self.line)


@dataclass
class _Slice:
    """One planned on-cpu window: segments are (start, end, func)."""

    tid: int
    cpu: int
    t_in: int
    t_out: int
    out_state: str  # RUNNABLE or BLOCKED at switch-out
    segments: list[tuple[int, int, _Func]]


@dataclass(frozen=True)
class Scenario:
    """Generator parameters; seed fully determines the output.

    n_min is the threshold the ground truth is computed under (None =
    half the thread count, the analyzer default).  Duration fields are
    nanoseconds and only the ones relevant to `kind` are read.
    """

    kind: str
    threads: int
    cpus: int
    seed: int = 0
    sample_period: int = 3_000_000
    n_min: int | None = None
    parallel_ns: int = 100_000     # serial: parallel phase length
    serial_ns: int = 400_000       # serial: serial phase length
    work_ns: int = 100_000         # balanced: per-thread work; convoy: post-lock work
    critical_ns: int = 10_000      # convoy: critical-section length
    rounds: int = 3                # convoy: turns per thread
    stages: tuple[int, ...] = ()   # pipeline: worker count per stage
    service_ns: tuple[int, ...] = ()  # pipeline: per-item service time per stage
    items: int = 100               # pipeline: items flowing through


@dataclass
class GroundTruth:
    """Expected analysis results for one generated trace."""

    cmetric: dict[int, float]        # per-thread, ns
    top_path: tuple[int, ...] | None
    top_function: str | None
    cr: float
    critical_slices: int
    total_slices: int
    n_min: int | None                # threshold used (None = half)


def _layout(kind: str, names: list[str]) -> dict[str, _Func]:
    return {name: _Func(name=name, file=f"{kind}.c", line=10 * (i + 1),
                        base=_FUNC_BASE + i * _FUNC_SIZE)
            for i, name in enumerate(names)}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ScenarioError(msg)


def _build_serial(s: Scenario):
    _require(s.threads >= 1, "serial: threads must be >= 1")
    _require(s.cpus >= s.threads, "serial: needs cpus >= threads")
    _require(s.parallel_ns >= 1 and s.serial_ns >= 1,
             "serial: phase lengths must be >= 1 ns")
    funcs = _layout("serial", ["parallel_work", "serial_work", "main"])
    par, ser = funcs["parallel_work"], funcs["serial_work"]
    p, e = s.parallel_ns, s.parallel_ns + s.serial_ns
    slices = [_Slice(tid=1, cpu=0, t_in=0, t_out=e, out_state=BLOCKED,
                     segments=[(0, p, par), (p, e, ser)])]
    for tid in range(2, s.threads + 1):
        slices.append(_Slice(tid=tid, cpu=tid - 1, t_in=0, t_out=p,
                             out_state=BLOCKED, segments=[(0, p, par)]))
    return slices, funcs


def _build_balanced(s: Scenario):
    _require(s.threads >= 1, "balanced: threads must be >= 1")
    _require(s.cpus >= s.threads, "balanced: needs cpus >= threads")
    _require(s.work_ns >= 1, "balanced: work_ns must be >= 1 ns")
    funcs = _layout("balanced", ["independent_work", "main"])
    work = funcs["independent_work"]
    slices = [_Slice(tid=tid, cpu=tid - 1, t_in=0, t_out=s.work_ns,
                     out_state=BLOCKED, segments=[(0, s.work_ns, work)])
              for tid in range(1, s.threads + 1)]
    return slices, funcs


def _build_convoy(s: Scenario):
    _require(s.threads >= 2, "convoy: threads must be >= 2")
    _require(s.critical_ns >= 1, "convoy: critical_ns must be >= 1 ns")
    _require(s.rounds >= 1, "convoy: rounds must be >= 1")
    _require(s.work_ns >= 0, "convoy: work_ns must be >= 0")
    if s.work_ns:
        _require(s.cpus >= s.threads + 1,
                 "convoy: work_ns > 0 needs cpus >= threads + 1")
        _require(s.work_ns < (s.threads - 1) * s.critical_ns,
                 "convoy: work_ns must be < (threads - 1) * critical_ns"
                 " so threads re-block before their next turn")
    else:
        _require(s.cpus >= 1, "convoy: cpus must be >= 1")
    names = ["critical_section", "parallel_work", "main"] if s.work_ns \
        else ["critical_section", "main"]
    funcs = _layout("convoy", names)
    crit = funcs["critical_section"]
    slices = []
    c, w = s.critical_ns, s.work_ns
    for g in range(s.threads * s.rounds):
        tid = g % s.threads + 1
        t0 = g * c
        slices.append(_Slice(tid=tid, cpu=0, t_in=t0, t_out=t0 + c,
                             out_state=RUNNABLE if w else BLOCKED,
                             segments=[(t0, t0 + c, crit)]))
        if w:
            par = funcs["parallel_work"]
            slices.append(_Slice(tid=tid, cpu=tid, t_in=t0 + c,
                                 t_out=t0 + c + w, out_state=BLOCKED,
                                 segments=[(t0 + c, t0 + c + w, par)]))
    return slices, funcs


def _build_pipeline(s: Scenario):
    _require(len(s.stages) >= 1, "pipeline: needs at least one stage")
    _require(len(s.service_ns) == len(s.stages),
             "pipeline: service_ns must list one time per stage")
    _require(all(c >= 1 for c in s.stages), "pipeline: stage counts must be >= 1")
    _require(all(v >= 1 for v in s.service_ns),
             "pipeline: service times must be >= 1 ns")
    _require(s.items >= 1, "pipeline: items must be >= 1")
    total = sum(s.stages)
    _require(s.threads == total,
             f"pipeline: threads ({s.threads}) must equal sum of stages ({total})")
    _require(s.cpus >= total, "pipeline: needs cpus >= sum of stages")

    funcs = _layout("pipeline",
                    [f"stage{j}_work" for j in range(len(s.stages))] + ["main"])
    # Item r at stage j is handled by worker r % stages[j]; it starts when
    # both the item (from stage j-1) and the worker (its previous item)
    # are available.  This recurrence fixes the whole schedule.
    slices: list[_Slice] = []
    prev_done = [0] * s.items
    tid_base = 1
    for j, (count, service) in enumerate(zip(s.stages, s.service_ns)):
        fn = funcs[f"stage{j}_work"]
        done = [0] * s.items
        worker_free = [0] * count
        for r in range(s.items):
            w = r % count
            start = max(prev_done[r], worker_free[w])
            done[r] = worker_free[w] = start + service
        for w in range(count):
            tid = tid_base + w
            open_start = open_end = None
            for r in range(w, s.items, count):
                begin, finish = done[r] - service, done[r]
                if open_end == begin:
                    open_end = finish  # worker never went idle: same slice
                else:
                    if open_end is not None:
                        slices.append(_Slice(tid=tid, cpu=tid - 1,
                                             t_in=open_start, t_out=open_end,
                                             out_state=BLOCKED,
                                             segments=[(open_start, open_end, fn)]))
                    open_start, open_end = begin, finish
            if open_end is not None:
                slices.append(_Slice(tid=tid, cpu=tid - 1, t_in=open_start,
                                     t_out=open_end, out_state=BLOCKED,
                                     segments=[(open_start, open_end, fn)]))
        prev_done = done
        tid_base += count
    return slices, funcs


_BUILDERS = {"serial": _build_serial, "balanced": _build_balanced,
             "convoy": _build_convoy, "pipeline": _build_pipeline}


def _comms(s: Scenario) -> dict[int, str]:
    if s.kind == "pipeline":
        out, tid = {}, 1
        for j, count in enumerate(s.stages):
            for w in range(count):
                out[tid] = f"s{j}w{w}"
                tid += 1
        return out
    return {tid: f"w{tid}" for tid in range(1, s.threads + 1)}


def _path_of(funcs: dict[str, _Func], fn: _Func) -> tuple[int, ...]:
    return (fn.frame, funcs["main"].frame)


def _events_from_slices(s: Scenario, slices: list[_Slice],
                        funcs: dict[str, _Func],
                        rng: random.Random) -> list[TraceEvent]:
    """Derive the event stream: creations, wakeups, switches, samples, exits.

    Events at equal timestamps are ordered creation < wakeup < switch <
    sample < exit, switches by cpu, the rest by tid; switch-out and
    switch-in landing on the same (ts, cpu) fuse into one switch event.
    """
    trace_end = max(sl.t_out for sl in slices)
    ordered = sorted(slices, key=lambda sl: (sl.t_in, sl.tid))

    outs: dict[tuple[int, int], _Slice] = {}
    ins: dict[tuple[int, int], _Slice] = {}
    last_out: dict[int, tuple[int, str]] = {}  # tid -> (t_out, out_state)
    keyed: list[tuple[int, int, int, TraceEvent]] = []

    for tid, comm in sorted(_comms(s).items()):
        keyed.append((0, 0, tid, TaskNew(ts=0, tid=tid, comm=comm)))

    for sl in ordered:
        prior = last_out.get(sl.tid)
        entered_running = prior is not None and prior == (sl.t_in, RUNNABLE)
        if not entered_running:
            keyed.append((sl.t_in, 1, sl.tid, SchedWakeup(ts=sl.t_in, tid=sl.tid)))
        key = (sl.t_in, sl.cpu)
        assert key not in ins, f"two switch-ins on cpu {sl.cpu} at {sl.t_in}"
        ins[key] = sl
        key = (sl.t_out, sl.cpu)
        assert key not in outs, f"two switch-outs on cpu {sl.cpu} at {sl.t_out}"
        outs[key] = sl
        last_out[sl.tid] = (sl.t_out, sl.out_state)

    for ts, cpu in sorted(set(outs) | set(ins)):
        out_sl = outs.get((ts, cpu))
        in_sl = ins.get((ts, cpu))
        if out_sl is not None:
            stack = _path_of(funcs, out_sl.segments[-1][2])
            ev = SchedSwitch(ts=ts, cpu=cpu, prev_tid=out_sl.tid,
                             prev_state=out_sl.out_state,
                             next_tid=in_sl.tid if in_sl else 0, stack=stack)
        else:
            ev = SchedSwitch(ts=ts, cpu=cpu, prev_tid=0, prev_state=RUNNABLE,
                             next_tid=in_sl.tid, stack=None)
        keyed.append((ts, 2, cpu, ev))

    period = s.sample_period
    for sl in ordered:
        first = max(1, -(-sl.t_in // period))  # ceil division
        for j in range(first, -(-sl.t_out // period)):
            t = j * period
            if t >= sl.t_out:
                break
            for begin, end, fn in sl.segments:
                if begin <= t < end:
                    ip = rng.randrange(fn.base, fn.base + _FUNC_SIZE)
                    keyed.append((t, 3, sl.tid, Sample(ts=t, tid=sl.tid, ip=ip)))
                    break

    for tid in sorted(_comms(s)):
        keyed.append((trace_end, 4, tid, TaskExit(ts=trace_end, tid=tid)))

    keyed.sort(key=lambda item: item[:3])
    return [ev for _, _, _, ev in keyed]


def _ground_truth(s: Scenario, slices: list[_Slice],
                  funcs: dict[str, _Func]) -> GroundTruth:
    """Sweep the constructed windows to get exact expected results.

    All threads live for the whole trace, so the threshold denominator is
    the constant thread count; criticality shares are accumulated as
    exact rationals and only converted to float per thread at the end.
    """
    delta: dict[int, int] = {}
    for sl in slices:
        delta[sl.t_in] = delta.get(sl.t_in, 0) + 1
        delta[sl.t_out] = delta.get(sl.t_out, 0) - 1
    bounds = sorted(delta)
    prefix_cm: dict[int, Fraction] = {bounds[0]: Fraction(0)}
    prefix_nt: dict[int, int] = {bounds[0]: 0}
    cm, nt, n = Fraction(0), 0, 0
    for i, b in enumerate(bounds[:-1]):
        n += delta[b]
        length = bounds[i + 1] - b
        if n:
            cm += Fraction(length, n)
            nt += length * n
        prefix_cm[bounds[i + 1]] = cm
        prefix_nt[bounds[i + 1]] = nt

    num, den = Config(n_min=s.n_min).nmin_ratio(s.threads)
    per_thread: dict[int, list[Fraction]] = {t: [] for t in _comms(s)}
    path_totals: dict[tuple[int, ...], list[Fraction]] = {}
    critical = 0
    for sl in slices:
        share = prefix_cm[sl.t_out] - prefix_cm[sl.t_in]
        per_thread[sl.tid].append(share)
        av_num = prefix_nt[sl.t_out] - prefix_nt[sl.t_in]
        if av_num * den < num * (sl.t_out - sl.t_in):
            critical += 1
            path = _path_of(funcs, sl.segments[-1][2])
            path_totals.setdefault(path, []).append(share)

    top_path = top_function = None
    if path_totals:
        totals = {p: sum(shares) for p, shares in path_totals.items()}
        top_path = min(totals, key=lambda p: (-totals[p], p))
        frame_to_name = {fn.frame: fn.name for fn in funcs.values()}
        top_function = frame_to_name.get(top_path[0])

    return GroundTruth(
        cmetric={tid: float(sum(shares, Fraction(0)))
                 for tid, shares in sorted(per_thread.items())},
        top_path=top_path,
        top_function=top_function,
        cr=critical / len(slices) if slices else 0.0,
        critical_slices=critical,
        total_slices=len(slices),
        n_min=s.n_min,
    )


def generate(s: Scenario) -> tuple[list[TraceEvent], SymbolMap, GroundTruth]:
    """Produce (trace events, symbol map, ground truth) for a scenario."""
    if s.kind not in _BUILDERS:
        raise ScenarioError(f"unknown scenario kind {s.kind!r}"
                            f" (expected one of {', '.join(KINDS)})")
    _require(s.sample_period >= 1, "sample_period must be >= 1 ns")
    _require(s.n_min is None or s.n_min >= 1, "n_min must be >= 1")
    slices, funcs = _BUILDERS[s.kind](s)
    rng = random.Random(s.seed)
    events = _events_from_slices(s, slices, funcs, rng)
    symbols = SymbolMap(fn.entry() for fn in funcs.values())
    truth = _ground_truth(s, slices, funcs)
    return events, symbols, truth


def write_outputs(prefix: str, events: list[TraceEvent], symbols: SymbolMap,
                  truth: GroundTruth) -> tuple[str, str, str]:
    """Write <prefix>.jsonl, <prefix>.sym and <prefix>.truth.json."""
    trace_path = prefix + ".jsonl"
    sym_path = prefix + ".sym"
    truth_path = prefix + ".truth.json"
    write_trace_file(trace_path, events)
    write_symbol_map(sym_path, symbols)
    doc = {
        "n_min": truth.n_min,
        "cmetric_ns": {str(tid): cm for tid, cm in sorted(truth.cmetric.items())},
        "top_path": list(truth.top_path) if truth.top_path is not None else None,
        "top_function": truth.top_function,
        "cr": truth.cr,
        "critical_slices": truth.critical_slices,
        "total_slices": truth.total_slices,
    }
    with open(truth_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return trace_path, sym_path, truth_path
