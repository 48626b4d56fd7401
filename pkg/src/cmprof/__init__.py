"""cmprof: offline serialization-bottleneck profiler for scheduler traces.

Replays multithreaded scheduler event traces, scores each on-cpu
timeslice by how little parallelism accompanied it (the criticality
metric), and ranks the call paths and code addresses that executed under
reduced parallelism.
"""

from .aggregate import (
    EMPTY_PATH,
    PathAggregate,
    Summary,
    compute_summary,
    merge_paths,
    rank_top_n,
)
from .engine import (
    SAMPLE,
    STACKTOP,
    Config,
    ReplayEngine,
    ReplayStats,
    ThreadState,
    TimesliceRecord,
    active_span,
    iter_activity,
    oracle_cmetric,
    run_replay,
)
from .report import render_json, render_text
from .symbols import SymbolEntry, SymbolMap, SymbolMapError, read_symbol_map, write_symbol_map
from .synth import KINDS, GroundTruth, Scenario, ScenarioError, generate, write_outputs
from .trace import (
    BLOCKED,
    RUNNABLE,
    TRACE_HEADER,
    Sample,
    SchedSwitch,
    SchedWakeup,
    TaskExit,
    TaskNew,
    TraceConsistencyError,
    TraceError,
    TraceEvent,
    TraceParseError,
    TraceStats,
    parse_event,
    read_trace_file,
    serialize_event,
    validate_trace,
    write_trace_file,
)

__version__ = "0.1.0"
