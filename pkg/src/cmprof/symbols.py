"""Address-range symbol table mapping code addresses to function/file/line."""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable


class SymbolMapError(Exception):
    """Symbol map file is malformed or ranges are inconsistent."""


@dataclass(frozen=True, slots=True)
class SymbolEntry:
    start: int  # inclusive
    end: int    # exclusive
    func: str
    file: str
    line: int


class SymbolMap:
    """Immutable sorted table of non-overlapping address ranges."""

    def __init__(self, entries: Iterable[SymbolEntry] = ()):
        ordered = sorted(entries, key=lambda e: e.start)
        for i, e in enumerate(ordered):
            if e.start >= e.end:
                raise SymbolMapError(
                    f"empty range [{e.start:#x}, {e.end:#x}) for {e.func!r}"
                )
            if e.line < 1:
                raise SymbolMapError(f"non-positive line {e.line} for {e.func!r}")
            if i and ordered[i - 1].end > e.start:
                raise SymbolMapError(
                    f"overlapping ranges at {e.start:#x}"
                    f" ({ordered[i - 1].func!r} / {e.func!r})"
                )
        self._entries = ordered
        self._starts = [e.start for e in ordered]

    def lookup(self, addr: int) -> SymbolEntry | None:
        """Return the entry whose [start, end) contains addr, else None."""
        i = bisect_right(self._starts, addr) - 1
        if i >= 0 and addr < self._entries[i].end:
            return self._entries[i]
        return None

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolMap) and self._entries == other._entries


def read_symbol_map(path: str) -> SymbolMap:
    """Load a JSONL symbol map of {"start","end","func","file","line"} rows."""
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                entries.append(SymbolEntry(start=int(obj["start"]),
                                           end=int(obj["end"]),
                                           func=str(obj["func"]),
                                           file=str(obj["file"]),
                                           line=int(obj["line"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SymbolMapError(f"{path}:{lineno}: bad symbol entry: {exc}")
    return SymbolMap(entries)


def write_symbol_map(path: str, symbols: Iterable[SymbolEntry]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in sorted(symbols, key=lambda s: s.start):
            f.write(json.dumps({"start": e.start, "end": e.end, "func": e.func,
                                "file": e.file, "line": e.line},
                               separators=(",", ":")) + "\n")
