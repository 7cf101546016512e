"""Canonical event/trace data model and the line-delimited trace file format.

Every session is an ordered sequence of timestamped browser events drawn
from a fixed 43-entry catalog (25 document-level events, 18 window-level
events). Traces round-trip through a UTF-8 JSONL format with one event per
line; class labels live in a sidecar CSV.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Union

from .errors import EmptyInputError, MalformedRecordError, UnknownEventNameError

# (index, name, domain). Indices 0-24 attach to the document, 25-42 to the
# window. The catalog is sealed at 43 entries.
EVENT_CATALOG: tuple[tuple[int, str, str], ...] = (
    (0, "mousedown", "document"),
    (1, "mouseup", "document"),
    (2, "mousemove", "document"),
    (3, "mouseover", "document"),
    (4, "mouseout", "document"),
    (5, "mousewheel", "document"),
    (6, "wheel", "document"),
    (7, "touchstart", "document"),
    (8, "touchend", "document"),
    (9, "touchmove", "document"),
    (10, "deviceorientation", "document"),
    (11, "keydown", "document"),
    (12, "keyup", "document"),
    (13, "keypress", "document"),
    (14, "click", "document"),
    (15, "dblclick", "document"),
    (16, "scroll", "document"),
    (17, "change", "document"),
    (18, "select", "document"),
    (19, "submit", "document"),
    (20, "reset", "document"),
    (21, "contextmenu", "document"),
    (22, "cut", "document"),
    (23, "copy", "document"),
    (24, "paste", "document"),
    (25, "load", "window"),
    (26, "unload", "window"),
    (27, "beforeunload", "window"),
    (28, "blur", "window"),
    (29, "focus", "window"),
    (30, "resize", "window"),
    (31, "error", "window"),
    (32, "abort", "window"),
    (33, "online", "window"),
    (34, "offline", "window"),
    (35, "storage", "window"),
    (36, "popstate", "window"),
    (37, "hashchange", "window"),
    (38, "pagehide", "window"),
    (39, "pageshow", "window"),
    (40, "message", "window"),
    (41, "beforeprint", "window"),
    (42, "afterprint", "window"),
)

NUM_EVENTS = len(EVENT_CATALOG)  # 43

_NAME_TO_INDEX = {name: idx for idx, name, _ in EVENT_CATALOG}
_INDEX_TO_NAME = {idx: name for idx, name, _ in EVENT_CATALOG}
_INDEX_TO_DOMAIN = {idx: domain for idx, _, domain in EVENT_CATALOG}

# Closed label set; "synthetic:<tag>" is an open namespace on top of it.
KNOWN_LABELS = frozenset(
    {
        "human",
        "ui_fuzzer",
        "crawler",
        "scanner",
        "random_naive",
        "random_delayed",
        "unknown",
    }
)


def is_valid_label(label: str) -> bool:
    return label in KNOWN_LABELS or (
        label.startswith("synthetic:") and len(label) > len("synthetic:")
    )


def catalog_lookup(name: str) -> int:
    """Return the catalog index for an event name."""
    try:
        return _NAME_TO_INDEX[name]
    except KeyError:
        raise UnknownEventNameError(f"unknown event name: {name!r}") from None


def catalog_name(index: int) -> str:
    """Return the event name for a catalog index."""
    try:
        return _INDEX_TO_NAME[index]
    except KeyError:
        raise UnknownEventNameError(f"unknown event index: {index!r}") from None


def catalog_domain(index: int) -> str:
    """Return 'document' or 'window' for a catalog index."""
    try:
        return _INDEX_TO_DOMAIN[index]
    except KeyError:
        raise UnknownEventNameError(f"unknown event index: {index!r}") from None


@dataclass(frozen=True)
class EventRecord:
    """One timestamped browser event, with pointer coordinates when present."""

    session_id: str
    event_index: int
    timestamp_ms: int
    x: int | None = None
    y: int | None = None
    url_path: str | None = None
    dom_target: str | None = None

    def __post_init__(self):
        if not (0 <= self.event_index < NUM_EVENTS):
            raise ValueError(f"event_index {self.event_index} outside catalog 0..{NUM_EVENTS - 1}")
        if self.timestamp_ms < 0:
            raise ValueError("timestamp must be >= 0")
        if (self.x is None) != (self.y is None):
            raise ValueError("x and y must be present together")

    @property
    def has_position(self) -> bool:
        return self.x is not None

    def to_wire(self, include_sid: bool = True) -> dict:
        """Compact dict in the trace-file field schema; absent keys omitted."""
        d: dict = {}
        if include_sid:
            d["sid"] = self.session_id
        d["i"] = self.event_index
        d["t"] = self.timestamp_ms
        if self.x is not None:
            d["x"] = self.x
            d["y"] = self.y
        if self.url_path is not None:
            d["p"] = self.url_path
        if self.dom_target is not None:
            d["d"] = self.dom_target
        return d

    @classmethod
    def from_wire(cls, d: dict, session_id: str | None = None) -> "EventRecord":
        sid = session_id if session_id is not None else d["sid"]
        return cls(
            session_id=sid,
            event_index=int(d["i"]),
            timestamp_ms=int(d["t"]),
            x=int(d["x"]) if "x" in d else None,
            y=int(d["y"]) if "y" in d else None,
            url_path=d.get("p"),
            dom_target=d.get("d"),
        )


@dataclass(frozen=True)
class Trace:
    """An ordered, non-empty per-session event sequence."""

    session_id: str
    records: tuple[EventRecord, ...]
    label: str | None = None

    def __post_init__(self):
        if not self.records:
            raise ValueError("trace must contain at least one record")
        for r in self.records:
            if r.session_id != self.session_id:
                raise ValueError("all records must share the trace session_id")
        ts = [r.timestamp_ms for r in self.records]
        if any(a > b for a, b in zip(ts, ts[1:])):
            raise ValueError("records must be sorted by timestamp")
        if self.label is not None and not is_valid_label(self.label):
            raise ValueError(f"invalid agent label: {self.label!r}")

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_records(
        cls, records: Iterable[EventRecord], label: str | None = None
    ) -> "Trace":
        """Build a trace, sorting by timestamp (stable: ties keep arrival order)."""
        recs = sorted(records, key=lambda r: r.timestamp_ms)
        if not recs:
            raise ValueError("trace must contain at least one record")
        return cls(session_id=recs[0].session_id, records=tuple(recs), label=label)

    def restrict_to_events(self, event_indices: Iterable[int]) -> "Trace":
        """Keep only records whose event index is in the given set.

        Raises ValueError when nothing survives (a trace cannot be empty).
        """
        keep = frozenset(event_indices)
        recs = tuple(r for r in self.records if r.event_index in keep)
        if not recs:
            raise ValueError("restriction left no records")
        return Trace(session_id=self.session_id, records=recs, label=self.label)


PathOrStream = Union[str, Path, IO]


def _open_text(path_or_stream: PathOrStream, mode: str):
    if isinstance(path_or_stream, (str, Path)):
        return open(path_or_stream, mode, encoding="utf-8"), True
    return path_or_stream, False


def parse_trace_file(path_or_stream: PathOrStream) -> list[Trace]:
    """Parse a JSONL trace file into Traces grouped by session id.

    Traces come back in order of first appearance, each sorted by timestamp
    (stable for ties). Malformed lines raise MalformedRecordError with the
    1-based line number; a file with no records raises EmptyInputError.
    """
    stream, owned = _open_text(path_or_stream, "r")
    groups: dict[str, list[EventRecord]] = {}
    try:
        for line_no, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecordError(line_no, f"invalid JSON: {e.msg}") from None
            if not isinstance(d, dict):
                raise MalformedRecordError(line_no, "record is not an object")
            for key in ("sid", "i", "t"):
                if key not in d:
                    raise MalformedRecordError(line_no, f"missing required field {key!r}")
            try:
                rec = EventRecord.from_wire(d)
            except (ValueError, TypeError) as e:
                raise MalformedRecordError(line_no, str(e)) from None
            groups.setdefault(rec.session_id, []).append(rec)
    except OSError as e:
        raise IOError(f"failed reading trace file: {e}") from e
    finally:
        if owned:
            stream.close()
    if not groups:
        raise EmptyInputError("trace file contains no records")
    return [Trace.from_records(recs) for recs in groups.values()]


def serialize_trace_file(traces: Iterable[Trace], path_or_stream: PathOrStream) -> int:
    """Write traces as JSONL, one event per line. Returns bytes written."""
    stream, owned = _open_text(path_or_stream, "w")
    written = 0
    try:
        for trace in traces:
            for rec in trace.records:
                line = json.dumps(rec.to_wire(), separators=(",", ":")) + "\n"
                stream.write(line)
                written += len(line.encode("utf-8"))
    except OSError as e:
        raise IOError(f"failed writing trace file: {e}") from e
    finally:
        if owned:
            stream.close()
    return written


def write_labels(traces: Iterable[Trace], path_or_stream: PathOrStream) -> None:
    """Write the sidecar label CSV (header 'sid,label'; unlabeled -> 'unknown')."""
    stream, owned = _open_text(path_or_stream, "w")
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["sid", "label"])
        for t in traces:
            w.writerow([t.session_id, t.label if t.label is not None else "unknown"])
    finally:
        if owned:
            stream.close()


def read_labels(path_or_stream: PathOrStream) -> dict[str, str]:
    """Read the sidecar label CSV into a sid -> label map."""
    stream, owned = _open_text(path_or_stream, "r")
    try:
        rows = list(csv.reader(stream))
    finally:
        if owned:
            stream.close()
    out: dict[str, str] = {}
    for row in rows:
        if not row or row == ["sid", "label"]:
            continue
        if len(row) != 2:
            raise ValueError(f"bad label row: {row!r}")
        out[row[0]] = row[1]
    return out


def apply_labels(traces: Iterable[Trace], labels: dict[str, str]) -> list[Trace]:
    """Return traces with labels attached from a sid -> label map."""
    return [
        Trace(t.session_id, t.records, labels.get(t.session_id, t.label))
        for t in traces
    ]


def traces_to_jsonl(traces: Iterable[Trace]) -> str:
    buf = io.StringIO()
    serialize_trace_file(traces, buf)
    return buf.getvalue()
