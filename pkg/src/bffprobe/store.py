"""Persistent store for test runs: one JSON record per run plus an index.

Layout under the store root: ``runs/<run_id>/record.json`` and
``runs/index.json``.  Records carry a content checksum so truncation or
bit-rot surfaces as CorruptRecord instead of silently wrong data, and every
write goes through a temp file + atomic rename so an interrupted save never
damages the previously stored version.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field

from .classify import Finding, ReportSummary
from .correlate import TraceMap
from .fuzz import TestSequence

RUN_STATUSES = ("running", "completed", "aborted")

_ULID_ALPHABET = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"  # Crockford base32
_ulid_lock = threading.Lock()
_ulid_last: list = [0, 0]


class NotFound(Exception):
    pass


class CorruptRecord(Exception):
    """Stored bytes do not match their checksum (truncation, tampering)."""


class SerializationFailure(Exception):
    pass


class StorageFull(Exception):
    pass


def new_run_id(now_ms: int | None = None) -> str:
    """ULID: 48-bit millisecond timestamp + 80 random bits, lexicographically
    sortable by creation time."""
    import secrets

    ms = int(time.time() * 1000) if now_ms is None else now_ms
    with _ulid_lock:
        rand = secrets.randbits(80)
        if ms <= _ulid_last[0]:  # same/backwards clock tick: keep ids ordered
            ms = _ulid_last[0]
            rand = _ulid_last[1] + 1
        _ulid_last[0], _ulid_last[1] = ms, rand
    value = (ms << 80) | rand
    chars = []
    for _ in range(26):
        chars.append(_ULID_ALPHABET[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


@dataclass
class RunRecord:
    run_id: str
    created_at: int  # microseconds since epoch
    config: dict  # run config snapshot, stored as plain data
    status: str = "running"
    sequences: list[TestSequence] = field(default_factory=list)
    trace_map: TraceMap | None = None
    findings: list[Finding] = field(default_factory=list)
    summary: ReportSummary | None = None

    def __post_init__(self):
        if self.status not in RUN_STATUSES:
            raise ValueError(f"unknown run status {self.status!r}")

    def validate(self) -> None:
        if self.status == "completed" and (self.trace_map is None or self.summary is None):
            raise ValueError("completed run must carry trace_map and summary")

    def finding_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for finding in self.findings:
            counts[finding.category] = counts.get(finding.category, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "config": self.config,
            "status": self.status,
            "sequences": [s.to_dict() for s in self.sequences],
            "trace_map": self.trace_map.to_dict() if self.trace_map else None,
            "findings": [f.to_dict() for f in self.findings],
            "summary": self.summary.to_dict() if self.summary else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            run_id=d["run_id"],
            created_at=d["created_at"],
            config=d.get("config", {}),
            status=d.get("status", "running"),
            sequences=[TestSequence.from_dict(s) for s in d.get("sequences", [])],
            trace_map=TraceMap.from_dict(d["trace_map"]) if d.get("trace_map") else None,
            findings=[Finding.from_dict(f) for f in d.get("findings", [])],
            summary=ReportSummary.from_dict(d["summary"]) if d.get("summary") else None,
        )


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


class RunStore:
    """Directory-backed store; single writer per run_id, many readers."""

    def __init__(self, root: str):
        self.root = root
        self._index_lock = threading.Lock()
        os.makedirs(self.root, exist_ok=True)

    # -- paths ---------------------------------------------------------------

    def _run_dir(self, run_id: str) -> str:
        return os.path.join(self.root, run_id)

    def _record_path(self, run_id: str) -> str:
        return os.path.join(self._run_dir(run_id), "record.json")

    @property
    def _index_path(self) -> str:
        return os.path.join(self.root, "index.json")

    # -- operations ----------------------------------------------------------

    def save_run(self, record: RunRecord) -> None:
        """Durably persist; same run_id overwrites atomically."""
        record.validate()
        try:
            payload = record.to_dict()
            body = _canonical(payload)
        except (TypeError, ValueError) as exc:
            raise SerializationFailure(str(exc)) from exc
        document = {"checksum": hashlib.sha256(body).hexdigest(), "record": payload}
        os.makedirs(self._run_dir(record.run_id), exist_ok=True)
        try:
            _atomic_write(self._record_path(record.run_id), _canonical(document))
        except OSError as exc:
            if exc.errno == 28:  # ENOSPC
                raise StorageFull(str(exc)) from exc
            raise
        self._update_index(record)

    def load_run(self, run_id: str) -> RunRecord:
        path = self._record_path(run_id)
        if not os.path.exists(path):
            raise NotFound(run_id)
        with open(path, "rb") as fh:
            raw = fh.read()
        try:
            document = json.loads(raw)
            payload = document["record"]
            checksum = document["checksum"]
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptRecord(f"{run_id}: unreadable record ({exc})") from exc
        if hashlib.sha256(_canonical(payload)).hexdigest() != checksum:
            raise CorruptRecord(f"{run_id}: checksum mismatch")
        return RunRecord.from_dict(payload)

    def list_runs(self, status: str | None = None, since: int | None = None) -> list[dict]:
        """Run summaries, newest first.  ``since`` filters on created_at (µs)."""
        with self._index_lock:
            index = self._read_index()
        rows = list(index.values())
        if status is not None:
            rows = [r for r in rows if r["status"] == status]
        if since is not None:
            rows = [r for r in rows if r["created_at"] >= since]
        rows.sort(key=lambda r: (r["created_at"], r["run_id"]), reverse=True)
        return rows

    def delete_run(self, run_id: str) -> None:
        import shutil

        if not os.path.isdir(self._run_dir(run_id)):
            raise NotFound(run_id)
        shutil.rmtree(self._run_dir(run_id))
        with self._index_lock:
            index = self._read_index()
            index.pop(run_id, None)
            _atomic_write(self._index_path, _canonical({"runs": list(index.values())}))

    # -- index ---------------------------------------------------------------

    def _update_index(self, record: RunRecord) -> None:
        with self._index_lock:
            index = self._read_index()
            index[record.run_id] = {
                "run_id": record.run_id,
                "created_at": record.created_at,
                "status": record.status,
                "finding_counts": record.finding_counts(),
            }
            _atomic_write(self._index_path, _canonical({"runs": list(index.values())}))

    def _read_index(self) -> dict[str, dict]:
        if not os.path.exists(self._index_path):
            return {}
        try:
            with open(self._index_path, "rb") as fh:
                rows = json.load(fh).get("runs", [])
            return {row["run_id"]: row for row in rows}
        except (ValueError, KeyError, TypeError):
            return self._rebuild_index()

    def _rebuild_index(self) -> dict[str, dict]:
        index: dict[str, dict] = {}
        for run_id in os.listdir(self.root):
            try:
                record = self.load_run(run_id)
            except (NotFound, CorruptRecord):
                continue
            index[run_id] = {
                "run_id": run_id,
                "created_at": record.created_at,
                "status": record.status,
                "finding_counts": record.finding_counts(),
            }
        return index


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
