"""Text and JSON rendering of ranked bottleneck paths.

Both renderers are pure functions of their inputs, so identical inputs
produce byte-identical output (the text layout is covered by golden-file
tests).
"""

from __future__ import annotations

import json

from .aggregate import PathAggregate, Summary
from .engine import STACKTOP
from .symbols import SymbolMap

_FREQ_HEADER = "Functions and lines + frequency"


def format_addr(addr: int) -> str:
    return f"0x{addr:08x}"


def _frame_label(symbols: SymbolMap, addr: int) -> str:
    entry = symbols.lookup(addr)
    if entry is None:
        return format_addr(addr)
    return f"{entry.func}() ({entry.file}:{entry.line})"


def _frequency_groups(agg: PathAggregate, symbols: SymbolMap):
    """Collapse addr_freq into per-function groups of per-line counts.

    Distinct addresses that symbolize to the same function/line merge;
    addresses with no symbol stand alone under their hex label.  Returns
    [(label, total, [(file, line, stacktop, count), ...])] with functions
    ordered by descending total and lines by descending count.
    """
    funcs: dict[str, dict[tuple[str, int, bool], int]] = {}
    unknowns: dict[tuple[int, bool], int] = {}
    for (addr, provenance), count in agg.addr_freq.items():
        stacktop = provenance == STACKTOP
        entry = symbols.lookup(addr)
        if entry is None:
            key = (addr, stacktop)
            unknowns[key] = unknowns.get(key, 0) + count
        else:
            lines = funcs.setdefault(entry.func, {})
            lkey = (entry.file, entry.line, stacktop)
            lines[lkey] = lines.get(lkey, 0) + count

    groups = []
    for name, lines in funcs.items():
        total = sum(lines.values())
        ordered = sorted(((f, l, st, c) for (f, l, st), c in lines.items()),
                         key=lambda x: (-x[3], x[0], x[1], x[2]))
        groups.append((f"{name}()", total, ordered))
    for (addr, stacktop), count in unknowns.items():
        label = format_addr(addr)
        if stacktop:
            label += " (StackTop)"
        groups.append((label, count, []))
    groups.sort(key=lambda g: (-g[1], g[0]))
    return groups


def render_text(ranked: list[PathAggregate], symbols: SymbolMap,
                summary: Summary) -> str:
    """Human-readable report: one block per ranked path, then the summary.

    Path frames are printed innermost first, each continuation prefixed
    with "<---" (read: "called by").  StackTop-provenance entries carry a
    "(StackTop)" suffix so fallback addresses are not mistaken for
    sampler hits.
    """
    out: list[str] = []
    for rank, agg in enumerate(ranked, 1):
        out.append(f"Critical Path {rank}:")
        out.append("")
        if agg.path:
            out.append(_frame_label(symbols, agg.path[0]))
            for addr in agg.path[1:]:
                out.append("<---" + _frame_label(symbols, addr))
        else:
            out.append("<no stack>")
        out.append("")
        out.append(_FREQ_HEADER)
        out.append("-" * len(_FREQ_HEADER))
        groups = _frequency_groups(agg, symbols)
        if not groups:
            out.append("(no addresses recorded)")
        for label, total, lines in groups:
            out.append(f"{label} -- {total}")
            for file, line, stacktop, count in lines:
                suffix = " (StackTop)" if stacktop else ""
                out.append(f"  {file}:{line}{suffix} -- {count}")
        out.append("")

    out.append("Summary")
    out.append("-------")
    out.append(f"Total timeslices    : {summary.total_slices}")
    out.append(f"Critical timeslices : {summary.critical_slices}"
               f" (CR = {summary.cr_percent:.2f}%)")
    out.append(f"Distinct call paths : {summary.distinct_paths}")
    out.append("")
    out.append("Per-thread CMetric (ns)")
    out.append("-----------------------")
    for tid, cmetric in summary.per_thread:
        out.append(f"tid {tid}: {cmetric:.3f}")
    out.append("")
    return "\n".join(out)


def render_json(ranked: list[PathAggregate], symbols: SymbolMap,
                summary: Summary) -> str:
    """The same content as render_text, as an indented JSON document."""
    paths = []
    for rank, agg in enumerate(ranked, 1):
        frames = []
        for addr in agg.path:
            entry = symbols.lookup(addr)
            frame = {"addr": addr}
            if entry is not None:
                frame.update(function=entry.func, file=entry.file,
                             line=entry.line)
            frames.append(frame)
        functions = []
        for label, total, lines in _frequency_groups(agg, symbols):
            functions.append({
                "label": label,
                "total": total,
                "lines": [{"file": f, "line": l, "stack_top": st, "count": c}
                          for f, l, st, c in lines],
            })
        paths.append({"rank": rank,
                      "total_cmetric_ns": agg.total_cmetric,
                      "slice_count": agg.slice_count,
                      "frames": frames,
                      "functions": functions})
    doc = {
        "summary": {
            "total_timeslices": summary.total_slices,
            "critical_timeslices": summary.critical_slices,
            "cr": summary.cr,
            "cr_percent": summary.cr_percent,
            "distinct_paths": summary.distinct_paths,
            "per_thread": [{"tid": tid, "cmetric_ns": cm}
                           for tid, cm in summary.per_thread],
        },
        "critical_paths": paths,
    }
    return json.dumps(doc, indent=2) + "\n"
