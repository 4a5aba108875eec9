"""Event abstraction and per-state event logs.

An event is a packet abstracted to direction + TCP flag combination, e.g.
"C_to_S_ACK+PSH". A trace is the event sequence of one window; the traces of
all windows assigned to one state form that state's event log.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, Sequence, Tuple

from .errors import TrafficMineError

if TYPE_CHECKING:  # pragma: no cover
    from .states import LabeledPacket
    from .windows import WindowConfig

# Canonical flag order inside a combination label. Joined with "+"; the empty
# combination is spelled NONE.
FLAG_ORDER = ("SYN", "ACK", "PSH", "FIN", "RST", "URG")
NO_FLAGS = "NONE"

DIRECTIONS = ("C_to_S", "S_to_C")


class EmptyLog(TrafficMineError):
    pass


class MalformedLine(TrafficMineError):
    pass


def flags_to_string(flags) -> str:
    """Render a flag set in canonical order; empty set -> NONE."""
    unknown = set(flags) - set(FLAG_ORDER)
    if unknown:
        raise ValueError(f"unknown TCP flags: {sorted(unknown)}")
    ordered = [f for f in FLAG_ORDER if f in flags]
    return "+".join(ordered) if ordered else NO_FLAGS


def parse_flag_string(text: str) -> frozenset:
    """Inverse of flags_to_string. Raises ValueError on unknown tokens."""
    if text == NO_FLAGS:
        return frozenset()
    tokens = text.split("+")
    if not tokens or any(t not in FLAG_ORDER for t in tokens):
        raise ValueError(f"malformed flag string: {text!r}")
    if len(set(tokens)) != len(tokens):
        raise ValueError(f"repeated flag in: {text!r}")
    return frozenset(tokens)


def make_event_label(direction: str, flags) -> str:
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction: {direction!r}")
    return f"{direction}_{flags_to_string(flags)}"


def parse_event_label(label: str) -> Tuple[str, frozenset]:
    for d in DIRECTIONS:
        prefix = d + "_"
        if label.startswith(prefix):
            return d, parse_flag_string(label[len(prefix):])
    raise ValueError(f"malformed event label: {label!r}")


@dataclass(frozen=True)
class Trace:
    """One window rendered as an event sequence.

    trace_id is (device id, session_number, window_index); together with the
    state it uniquely identifies the originating window.
    """

    trace_id: Tuple[str, int, int]
    events: Tuple[str, ...]


@dataclass
class EventLog:
    """Multiset of traces of one state."""

    state: int
    traces: Tuple[Trace, ...] = field(default_factory=tuple)

    def variants(self) -> Dict[Tuple[str, ...], int]:
        return dict(Counter(t.events for t in self.traces))

    def __len__(self) -> int:
        return len(self.traces)


def sorted_variants(log: EventLog):
    """Variants by descending frequency, ties broken lexicographically."""
    return sorted(log.variants().items(), key=lambda kv: (-kv[1], kv[0]))


def extract_event_logs(labeled: Sequence["LabeledPacket"], cfg: "WindowConfig",
                       k: int, device_id: str = "d") -> Dict[int, EventLog]:
    """Group state-labeled packets back into windows and emit one log per state.

    Every window becomes exactly one trace of length cfg.window_length in the
    log of its state; logs exist (possibly empty) for every state 1..k.
    """
    buckets: Dict[int, list] = {s: [] for s in range(1, k + 1)}
    l = cfg.window_length
    i = 0
    while i < len(labeled):
        chunk = labeled[i:i + l]
        if len(chunk) != l:
            raise ValueError("labeled packets do not form whole windows")
        widx = chunk[0].window_index
        state = chunk[0].state
        if any(p.window_index != widx or p.state != state for p in chunk):
            raise ValueError(f"inconsistent window grouping at window {widx}")
        if state not in buckets:
            raise ValueError(f"state {state} out of range 1..{k}")
        events = tuple(make_event_label(p.record.direction, p.record.tcp_flags)
                       for p in chunk)
        session = chunk[0].record.session_number
        buckets[state].append(Trace((device_id, session, widx), events))
        i += l
    return {s: EventLog(state=s, traces=tuple(ts)) for s, ts in buckets.items()}


def variant_filter(log: EventLog, keep_fraction: float) -> EventLog:
    """Keep the most frequent variants covering keep_fraction of the traces.

    Variants are ranked by descending frequency (ties: lexicographic label
    sequence); the smallest prefix whose cumulative frequency reaches
    keep_fraction * len(log) survives. Trace order is preserved.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    if len(log) == 0:
        raise EmptyLog(f"state {log.state}: cannot filter an empty log")
    target = keep_fraction * len(log)
    kept = set()
    cum = 0
    for events, freq in sorted_variants(log):
        kept.add(events)
        cum += freq
        if cum >= target:
            break
    return EventLog(state=log.state,
                    traces=tuple(t for t in log.traces if t.events in kept))


def write_log(log: EventLog) -> str:
    """Serialize to JSON Lines, one trace per line."""
    lines = []
    for t in log.traces:
        doc = {"trace_id": [t.trace_id[0], t.trace_id[1], t.trace_id[2]],
               "events": list(t.events)}
        lines.append(json.dumps(doc, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def read_log(text: str, state: int) -> EventLog:
    """Parse JSON Lines written by write_log. Round-trips exactly."""
    traces = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            device, session, window = doc["trace_id"]
            events = tuple(doc["events"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise MalformedLine(f"line {n}: {e}") from e
        if not isinstance(device, str) or not all(isinstance(x, int) for x in (session, window)):
            raise MalformedLine(f"line {n}: malformed trace_id")
        if not all(isinstance(e, str) for e in events):
            raise MalformedLine(f"line {n}: malformed events")
        traces.append(Trace((device, session, window), events))
    return EventLog(state=state, traces=tuple(traces))


def export_xes(log: EventLog) -> str:
    """Render as XES XML (write-only; no importer)."""
    root = ET.Element("log", {"xes.version": "1.0", "xes.features": ""})
    ET.SubElement(root, "extension", {
        "name": "Concept", "prefix": "concept",
        "uri": "http://www.xes-standard.org/concept.xesext"})
    for t in log.traces:
        trace_el = ET.SubElement(root, "trace")
        name = f"{t.trace_id[0]}:{t.trace_id[1]}:{t.trace_id[2]}"
        ET.SubElement(trace_el, "string", {"key": "concept:name", "value": name})
        for ev in t.events:
            ev_el = ET.SubElement(trace_el, "event")
            ET.SubElement(ev_el, "string", {"key": "concept:name", "value": ev})
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"
