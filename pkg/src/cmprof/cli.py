"""cmprof command line: analyze traces, synthesize scenarios, run the oracle.

Exit codes: 0 success, 1 trace/symbol errors, 2 bad flags or scenario
parameters, 3 oracle/engine divergence.  CMPROF_LOG=error|info|debug
controls diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

from .aggregate import compute_summary, merge_paths, rank_top_n
from .engine import Config, oracle_cmetric, run_replay
from .report import render_json, render_text
from .symbols import SymbolMap, SymbolMapError, read_symbol_map
from .synth import KINDS, Scenario, ScenarioError, generate, write_outputs
from .trace import TraceError, read_trace_file, validate_trace

log = logging.getLogger("cmprof")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("CMPROF_LOG", "error").lower(),
                            logging.ERROR)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("cmprof: %(levelname)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)


def _positive(parser: argparse.ArgumentParser, name: str, value: int) -> None:
    if value is not None and value < 1:
        parser.error(f"{name} must be >= 1, got {value}")


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmprof",
        description="Offline serialization-bottleneck profiler for"
                    " multithreaded scheduler traces.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze",
                       help="replay a trace and report the top bottleneck"
                            " call paths")
    p.add_argument("trace", help="JSONL trace file")
    p.add_argument("--symbols", metavar="FILE",
                   help="JSONL symbol map for address-to-source rendering")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--nmin", type=int, metavar="N",
                       help="fixed parallelism threshold")
    group.add_argument("--nmin-half", action="store_true",
                       help="threshold = half the live thread count (default)")
    p.add_argument("--top", type=int, default=5, metavar="N",
                   help="number of call paths to report (default 5)")
    p.add_argument("--stack-depth", type=int, default=16, metavar="M",
                   help="innermost frames kept per critical slice (default 16)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", metavar="FILE", help="write the report here"
                   " instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth",
                       help="generate a synthetic trace with known ground truth")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--threads", type=int, metavar="K")
    p.add_argument("--cpus", type=int, metavar="C",
                   help="default: enough cpus for the scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-period", type=int, default=3_000_000, metavar="NS")
    p.add_argument("--nmin", type=int, metavar="N",
                   help="threshold the ground truth is computed under"
                        " (default: half the threads)")
    p.add_argument("--parallel-ns", type=int, default=100_000, metavar="NS",
                   help="serial scenario: parallel phase length")
    p.add_argument("--serial-ns", type=int, default=400_000, metavar="NS",
                   help="serial scenario: serial phase length")
    p.add_argument("--work-ns", type=int, default=None, metavar="NS",
                   help="balanced: per-thread work (default 100000);"
                        " convoy: post-lock parallel work (default 0)")
    p.add_argument("--critical-ns", type=int, default=10_000, metavar="NS",
                   help="convoy: critical-section length")
    p.add_argument("--rounds", type=int, default=3,
                   help="convoy: turns per thread")
    p.add_argument("--stages", type=_csv_ints, metavar="N,N,...",
                   help="pipeline: worker count per stage, e.g. 1,20,20,20,1")
    p.add_argument("--service-ns", type=_csv_ints, metavar="NS,NS,...",
                   help="pipeline: per-item service time per stage"
                        " (default 10000 each)")
    p.add_argument("--items", type=int, default=100,
                   help="pipeline: items flowing through (default 100)")
    p.add_argument("--out", required=True, metavar="PREFIX",
                   help="output prefix for .jsonl/.sym/.truth.json")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle",
                       help="print per-thread criticality from the direct"
                            " reference computation")
    p.add_argument("trace")
    p.add_argument("--check", action="store_true",
                   help="compare against the incremental engine; exit 3 on"
                        " divergence beyond 1e-9 relative")
    p.set_defaults(func=cmd_oracle)
    return parser


def cmd_analyze(args) -> int:
    try:
        events = read_trace_file(args.trace)
    except OSError as exc:
        raise TraceError(f"cannot open trace: {exc}") from exc
    stats = validate_trace(events)
    log.info("trace ok: %d events, %d threads, span %d ns",
             stats.events, len(stats.app_tids), stats.span_ns)

    cfg = Config(n_min=args.nmin, stack_depth=args.stack_depth)
    records, rstats = run_replay(events, cfg)
    merged = merge_paths(records)
    ranked = rank_top_n(merged, args.top)
    symbols = read_symbol_map(args.symbols) if args.symbols else SymbolMap()
    summary = compute_summary(rstats, merged)
    log.info("%d slices, %d critical, %d distinct paths",
             summary.total_slices, summary.critical_slices,
             summary.distinct_paths)

    render = render_json if args.format == "json" else render_text
    text = render(ranked, symbols, summary)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _scenario_from_args(args) -> Scenario:
    kind = args.kind
    if kind == "pipeline":
        if not args.stages:
            raise ScenarioError("pipeline: --stages is required")
        service = args.service_ns or (10_000,) * len(args.stages)
        threads = args.threads if args.threads is not None else sum(args.stages)
        cpus = args.cpus if args.cpus is not None else sum(args.stages)
        return Scenario(kind=kind, threads=threads, cpus=cpus, seed=args.seed,
                        sample_period=args.sample_period, n_min=args.nmin,
                        stages=args.stages, service_ns=service,
                        items=args.items)
    if args.threads is None:
        raise ScenarioError(f"{kind}: --threads is required")
    work_default = 100_000 if kind == "balanced" else 0
    work = args.work_ns if args.work_ns is not None else work_default
    if args.cpus is not None:
        cpus = args.cpus
    elif kind == "convoy":
        cpus = args.threads + 1 if work else 1
    else:
        cpus = args.threads
    return Scenario(kind=kind, threads=args.threads, cpus=cpus, seed=args.seed,
                    sample_period=args.sample_period, n_min=args.nmin,
                    parallel_ns=args.parallel_ns, serial_ns=args.serial_ns,
                    work_ns=work, critical_ns=args.critical_ns,
                    rounds=args.rounds)


def cmd_synth(args) -> int:
    scenario = _scenario_from_args(args)
    events, symbols, truth = generate(scenario)
    for path in write_outputs(args.out, events, symbols, truth):
        print(f"wrote {path}")
    log.info("%d events, %d slices, expected top function %s",
             len(events), truth.total_slices, truth.top_function)
    return 0


def cmd_oracle(args) -> int:
    try:
        events = read_trace_file(args.trace)
    except OSError as exc:
        raise TraceError(f"cannot open trace: {exc}") from exc
    validate_trace(events)
    reference = oracle_cmetric(events)
    for tid in sorted(reference):
        print(f"{tid}: {reference[tid]:.3f} ns")
    if args.check:
        _, stats = run_replay(events, Config())
        for tid in sorted(set(reference) | set(stats.cm_hash)):
            ref = reference.get(tid, 0.0)
            got = stats.cm_hash.get(tid, 0.0)
            if not math.isclose(got, ref, rel_tol=1e-9, abs_tol=1e-9):
                print(f"cmprof: divergence for tid {tid}:"
                      f" engine {got!r} vs oracle {ref!r}", file=sys.stderr)
                return 3
        print(f"check: engine matches oracle for {len(reference)} thread(s)")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _positive(parser, "--top", getattr(args, "top", None))
    _positive(parser, "--stack-depth", getattr(args, "stack_depth", None))
    _positive(parser, "--nmin", getattr(args, "nmin", None))
    _setup_logging()
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"cmprof: error: {exc}", file=sys.stderr)
        return 2
    except (TraceError, SymbolMapError, OSError) as exc:
        print(f"cmprof: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
