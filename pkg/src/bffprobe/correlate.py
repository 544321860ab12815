"""Map each main request to the BFF onto the sub-requests it fanned out.

The mapping is a single left-to-right pass over the chronologically sorted
capture log: an event whose destination is the BFF endpoint opens a new trace
entry; every other event is attributed to the entry currently open.  This is
only sound when main requests are executed serially with a quiescence window,
which the fuzz executor enforces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .capture import CaptureLog, TrafficEvent, split_endpoint

ORACLE_HEADER = "X-Trace-Oracle"

WARN_NO_BFF_TRAFFIC = "no-bff-traffic"
WARN_ORPHANS = "orphan-events"
WARN_POSSIBLE_SELF_CALL = "possible-bff-self-call"
WARN_UNMATCHED_ENTRY = "unmatched-entry"


class AmbiguousLink(Exception):
    """Two executed cases claim the same trace entry; the serial contract broke."""


@dataclass
class TraceEntry:
    entry_id: str
    main: TrafficEvent
    subs: list[TrafficEvent] = field(default_factory=list)
    sequence_ref: str | None = None  # "<sequence_id>/<case_index>" once linked
    annotations: list[str] = field(default_factory=list)

    @property
    def statuses(self) -> list[int]:
        return [self.main.status] + [s.status for s in self.subs]

    def to_dict(self) -> dict:
        d = {
            "entry_id": self.entry_id,
            "main": self.main.to_dict(),
            "subs": [s.to_dict() for s in self.subs],
        }
        if self.sequence_ref is not None:
            d["sequence_ref"] = self.sequence_ref
        if self.annotations:
            d["annotations"] = list(self.annotations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEntry":
        return cls(
            entry_id=d["entry_id"],
            main=TrafficEvent.from_dict(d["main"]),
            subs=[TrafficEvent.from_dict(s) for s in d.get("subs", [])],
            sequence_ref=d.get("sequence_ref"),
            annotations=list(d.get("annotations", [])),
        )


@dataclass
class TraceMap:
    bff: str
    entries: list[TraceEntry] = field(default_factory=list)
    orphans: list[TrafficEvent] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def event_count(self) -> int:
        return sum(1 + len(e.subs) for e in self.entries) + len(self.orphans)

    def entry(self, entry_id: str) -> TraceEntry:
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        raise KeyError(entry_id)

    def to_dict(self) -> dict:
        d = {
            "bff": self.bff,
            "entries": [e.to_dict() for e in self.entries],
            "orphans": [o.to_dict() for o in self.orphans],
        }
        if self.warnings:
            d["warnings"] = list(self.warnings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraceMap":
        return cls(
            bff=d["bff"],
            entries=[TraceEntry.from_dict(e) for e in d.get("entries", [])],
            orphans=[TrafficEvent.from_dict(o) for o in d.get("orphans", [])],
            warnings=list(d.get("warnings", [])),
        )


def build_trace_map(log: CaptureLog, bff: str) -> TraceMap:
    """Partition a sorted capture log into main/sub trace entries.

    Events destined to ``bff`` (host:port) open a new entry; everything else
    is appended to the open entry's sub list.  Events arriving before the
    first main request land in the orphan bucket.  A log with zero main
    requests yields an all-orphan map flagged with a warning rather than an
    error: the result is vacuous, not wrong.
    """
    bff_host, bff_port = split_endpoint(bff)
    trace_map = TraceMap(bff=bff)
    current: TraceEntry | None = None
    client_hosts: set[str] = set()
    for event in log.events:
        if event.resp_host == bff_host and event.resp_port == bff_port:
            if client_hosts and event.orig_host == bff_host and bff_host not in client_hosts:
                if WARN_POSSIBLE_SELF_CALL not in trace_map.warnings:
                    trace_map.warnings.append(WARN_POSSIBLE_SELF_CALL)
            client_hosts.add(event.orig_host)
            current = TraceEntry(entry_id=f"t{len(trace_map.entries):04d}", main=event)
            trace_map.entries.append(current)
        elif current is None:
            trace_map.orphans.append(event)
        else:
            current.subs.append(event)
    if not trace_map.entries:
        trace_map.warnings.append(WARN_NO_BFF_TRAFFIC)
    if trace_map.orphans:
        trace_map.warnings.append(WARN_ORPHANS)
    return trace_map


def link_sequences(trace_map: TraceMap, sequences, quiescence: float = 0.25) -> TraceMap:
    """Attach each trace entry to the fuzz case that produced its main request.

    A case claims an entry when the entry's main timestamp falls inside the
    case's [sent_at, received_at] interval, or lies within the quiescence
    window of it.  Two cases claiming one entry means main requests
    overlapped, which breaks chronological attribution: that raises
    AmbiguousLink.  An entry no case claims is foreign traffic and is only
    flagged.  Mutates and returns ``trace_map``.
    """
    window = int(quiescence * 1_000_000)
    cases = []  # (sent_at, received_at, ref)
    for seq in sequences:
        for idx, case in enumerate(seq.cases):
            if case.sent_at is None:
                continue
            end = case.received_at if case.received_at is not None else case.sent_at
            cases.append((case.sent_at, end, f"{seq.id}/{idx}"))

    claimed: dict[str, str] = {}
    for entry in trace_map.entries:
        ts = entry.main.ts
        inside = [ref for start, end, ref in cases if start <= ts <= end]
        if len(inside) > 1:
            raise AmbiguousLink(f"entry {entry.entry_id}: cases {inside} overlap its main request")
        if inside:
            ref = inside[0]
        else:
            near = [
                (min(abs(ts - start), abs(ts - end)), ref)
                for start, end, ref in cases
                if min(abs(ts - start), abs(ts - end)) <= window
            ]
            if not near:
                entry.sequence_ref = None
                entry.annotations.append(WARN_UNMATCHED_ENTRY)
                if WARN_UNMATCHED_ENTRY not in trace_map.warnings:
                    trace_map.warnings.append(WARN_UNMATCHED_ENTRY)
                continue
            near.sort()
            ref = near[0][1]
        if ref in claimed.values():
            raise AmbiguousLink(f"case {ref} claims both {entry.entry_id} and an earlier entry")
        entry.sequence_ref = ref
        claimed[entry.entry_id] = ref
    return trace_map
