"""HTTP traffic capture: logging reverse proxies and offline log ingestion.

A ``RecordingProxy`` sits in front of one upstream (the BFF or one backend),
forwards every exchange unmodified, and appends one ``TrafficEvent`` per
exchange.  ``ingest_log`` reads the same events back from disk, either from
the proxy's own JSONL format or from a Zeek-style tab-separated http.log.
"""

from __future__ import annotations

import base64
import http.client
import json
import socket
import threading
import time
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

# Per-body capture limit; forwarding is never truncated, only the stored copy.
BODY_CAPTURE_LIMIT = 64 * 1024

HOP_BY_HOP = {
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailers",
    "transfer-encoding",
    "upgrade",
}

ZEEK_REQUIRED_FIELDS = (
    "ts",
    "id.orig_h",
    "id.orig_p",
    "id.resp_h",
    "id.resp_p",
    "method",
    "host",
    "uri",
    "status_code",
)


class BindFailed(Exception):
    """The proxy could not bind its listen address."""


class UnknownDialect(Exception):
    pass


class UnreadableFile(Exception):
    pass


class EmptyAfterSkips(Exception):
    """Every record in the log was malformed (or the log had no records)."""


class MixedRuns(Exception):
    """merge_logs was given logs from different runs."""


class EmptyInput(Exception):
    """merge_logs was given no logs at all."""


@dataclass
class TrafficEvent:
    """One observed HTTP exchange."""

    ts: int  # microseconds since epoch, request-line receipt time
    orig_host: str
    orig_port: int
    resp_host: str
    resp_port: int
    method: str
    uri: str
    status: int  # 0 when no response was observed
    req_headers: dict | None = None
    resp_headers: dict | None = None
    req_body: bytes | None = None
    resp_body: bytes | None = None
    req_body_truncated: bool = False
    resp_body_truncated: bool = False
    proxy_generated: bool = False  # status was injected by the proxy itself

    def __post_init__(self):
        if not 1 <= self.resp_port <= 65535:
            raise ValueError(f"resp_port {self.resp_port} out of range")
        if self.status != 0 and not 100 <= self.status <= 599:
            raise ValueError(f"status {self.status} out of range")
        for body in (self.req_body, self.resp_body):
            if body is not None and len(body) > BODY_CAPTURE_LIMIT:
                raise ValueError("captured body exceeds capture limit")

    @property
    def destination(self) -> str:
        return f"{self.resp_host}:{self.resp_port}"

    @property
    def origin(self) -> str:
        return f"{self.orig_host}:{self.orig_port}"

    def header(self, name: str, direction: str = "req") -> str | None:
        headers = self.req_headers if direction == "req" else self.resp_headers
        if not headers:
            return None
        lowered = {k.lower(): v for k, v in headers.items()}
        return lowered.get(name.lower())

    def to_dict(self) -> dict:
        d = {
            "ts": self.ts,
            "orig_host": self.orig_host,
            "orig_port": self.orig_port,
            "resp_host": self.resp_host,
            "resp_port": self.resp_port,
            "method": self.method,
            "uri": self.uri,
            "status": self.status,
        }
        if self.req_headers is not None:
            d["req_headers"] = dict(self.req_headers)
        if self.resp_headers is not None:
            d["resp_headers"] = dict(self.resp_headers)
        if self.req_body is not None:
            d["req_body"] = base64.b64encode(self.req_body).decode("ascii")
        if self.resp_body is not None:
            d["resp_body"] = base64.b64encode(self.resp_body).decode("ascii")
        if self.req_body_truncated:
            d["req_body_truncated"] = True
        if self.resp_body_truncated:
            d["resp_body_truncated"] = True
        if self.proxy_generated:
            d["proxy_generated"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficEvent":
        def body(key):
            return base64.b64decode(d[key]) if d.get(key) is not None and key in d else None

        return cls(
            ts=int(d["ts"]),
            orig_host=d["orig_host"],
            orig_port=int(d["orig_port"]),
            resp_host=d["resp_host"],
            resp_port=int(d["resp_port"]),
            method=d["method"],
            uri=d["uri"],
            status=int(d["status"]),
            req_headers=d.get("req_headers"),
            resp_headers=d.get("resp_headers"),
            req_body=body("req_body"),
            resp_body=body("resp_body"),
            req_body_truncated=bool(d.get("req_body_truncated", False)),
            resp_body_truncated=bool(d.get("resp_body_truncated", False)),
            proxy_generated=bool(d.get("proxy_generated", False)),
        )


@dataclass
class CaptureLog:
    """Chronologically ordered event list for one run."""

    run_id: str
    events: list[TrafficEvent] = field(default_factory=list)
    skipped_records: int = 0

    def __post_init__(self):
        for a, b in zip(self.events, self.events[1:]):
            if a.ts > b.ts:
                raise ValueError("events not sorted by ts")

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "events": [e.to_dict() for e in self.events],
            "skipped_records": self.skipped_records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureLog":
        return cls(
            run_id=d["run_id"],
            events=[TrafficEvent.from_dict(e) for e in d.get("events", [])],
            skipped_records=int(d.get("skipped_records", 0)),
        )


def _now_us() -> int:
    return time.time_ns() // 1000


def _clip(body: bytes | None) -> tuple[bytes | None, bool]:
    if body is None:
        return None, False
    if len(body) > BODY_CAPTURE_LIMIT:
        return body[:BODY_CAPTURE_LIMIT], True
    return body, False


class _ProxyHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "RecordingProxy/1.0"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _handle(self):
        proxy: RecordingProxy = self.server.proxy  # type: ignore[attr-defined]
        ts = _now_us()
        length = int(self.headers.get("Content-Length") or 0)
        req_body = self.rfile.read(length) if length else b""
        req_headers = dict(self.headers.items())

        status = 502
        resp_headers: dict = {}
        resp_body = b""
        reason = "Bad Gateway"
        proxy_generated = True
        try:
            conn = http.client.HTTPConnection(proxy.upstream_host, proxy.upstream_port, timeout=proxy.timeout)
            try:
                fwd_headers = {k: v for k, v in req_headers.items() if k.lower() not in HOP_BY_HOP}
                fwd_headers["Host"] = f"{proxy.upstream_host}:{proxy.upstream_port}"
                fwd_headers["Content-Length"] = str(len(req_body))
                conn.request(self.command, self.path, body=req_body, headers=fwd_headers)
                resp = conn.getresponse()
                status = resp.status
                reason = resp.reason
                resp_body = resp.read()
                resp_headers = {k: v for k, v in resp.getheaders() if k.lower() not in HOP_BY_HOP}
                proxy_generated = False
            finally:
                conn.close()
        except (OSError, http.client.HTTPException):
            resp_body = b'{"error": "upstream unreachable"}'
            resp_headers = {"Content-Type": "application/json"}

        try:
            self.send_response(status, reason)
            for name, value in resp_headers.items():
                if name.lower() != "content-length":
                    self.send_header(name, value)
            self.send_header("Content-Length", str(len(resp_body)))
            self.end_headers()
            if self.command != "HEAD" and status not in (204, 304):
                self.wfile.write(resp_body)
        except OSError:
            pass  # client went away; the exchange is still recorded

        stored_req, req_trunc = _clip(req_body if req_body else None)
        stored_resp, resp_trunc = _clip(resp_body if resp_body else None)
        proxy._record(
            TrafficEvent(
                ts=ts,
                orig_host=self.client_address[0],
                orig_port=self.client_address[1],
                resp_host=proxy.upstream_host,
                resp_port=proxy.upstream_port,
                method=self.command,
                uri=self.path,
                status=status,
                req_headers=req_headers,
                resp_headers=resp_headers or None,
                req_body=stored_req,
                resp_body=stored_resp,
                req_body_truncated=req_trunc,
                resp_body_truncated=resp_trunc,
                proxy_generated=proxy_generated,
            )
        )

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = do_HEAD = do_OPTIONS = _handle


class RecordingProxy:
    """Logging reverse proxy in front of one upstream."""

    def __init__(self, listen: str, upstream: str, run_id: str, log_path: str | None = None, timeout: float = 10.0):
        self.listen_host, self.listen_port = split_endpoint(listen)
        self.upstream_host, self.upstream_port = split_endpoint(upstream)
        self.run_id = run_id
        self.timeout = timeout
        self._events: list[TrafficEvent] = []
        self._lock = threading.Lock()
        self._log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            self._server = ThreadingHTTPServer((self.listen_host, self.listen_port), _ProxyHandler)
        except OSError as exc:
            if self._log_fh:
                self._log_fh.close()
            raise BindFailed(f"cannot bind {listen}: {exc}") from exc
        self._server.proxy = self  # type: ignore[attr-defined]
        self.listen_port = self._server.server_address[1]  # resolves port 0
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05), daemon=True
        )
        self._thread.start()

    @property
    def listen(self) -> str:
        return f"{self.listen_host}:{self.listen_port}"

    @property
    def upstream(self) -> str:
        return f"{self.upstream_host}:{self.upstream_port}"

    def _record(self, event: TrafficEvent) -> None:
        with self._lock:
            self._events.append(event)
            if self._log_fh:
                self._log_fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
                self._log_fh.flush()

    def capture_log(self) -> CaptureLog:
        """Snapshot of everything recorded so far, sorted by ts."""
        with self._lock:
            events = sorted(self._events, key=lambda e: e.ts)
        return CaptureLog(run_id=self.run_id, events=events)

    def stop(self) -> CaptureLog:
        """Stop serving and return the final flushed log."""
        self._server.shutdown()
        self._thread.join(timeout=10)
        self._server.server_close()
        if self._log_fh:
            self._log_fh.close()
            self._log_fh = None
        return self.capture_log()


def start_proxy(listen: str, upstream: str, run_id: str, log_path: str | None = None) -> RecordingProxy:
    """Start a logging reverse proxy; raises BindFailed if the port is taken."""
    return RecordingProxy(listen, upstream, run_id, log_path=log_path)


def split_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {endpoint!r}")
    return host, int(port)


def ingest_log(source: str, dialect: str, run_id: str = "") -> CaptureLog:
    """Read a traffic log from disk into a sorted CaptureLog.

    Dialects: ``zeek-http`` (tab-separated with a ``#fields`` header, ``-``
    for unset) and ``native-jsonl`` (the proxy's own on-disk format).
    Records missing required fields are skipped and counted; an input that
    yields no events at all raises EmptyAfterSkips.
    """
    if dialect not in ("zeek-http", "native-jsonl"):
        raise UnknownDialect(dialect)
    try:
        with open(source, "r", encoding="utf-8", errors="replace") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UnreadableFile(f"cannot read {source}: {exc}") from exc

    if dialect == "zeek-http":
        events, skipped = _parse_zeek_http(lines)
    else:
        events, skipped = _parse_jsonl(lines)

    if not events:
        raise EmptyAfterSkips(f"{source}: no usable records ({skipped} skipped)")
    events = sorted(events, key=lambda e: e.ts)  # stable: ties keep file order
    return CaptureLog(run_id=run_id, events=events, skipped_records=skipped)


def _parse_zeek_http(lines: list[str]) -> tuple[list[TrafficEvent], int]:
    fields: list[str] = []
    events: list[TrafficEvent] = []
    skipped = 0
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#fields"):
                fields = line.split("\t")[1:]
            continue
        if not fields:
            skipped += 1
            continue
        values = line.split("\t")
        record = dict(zip(fields, values))
        try:
            events.append(_zeek_event(record))
        except (KeyError, ValueError, InvalidOperation):
            skipped += 1
    return events, skipped


def _zeek_event(record: dict) -> TrafficEvent:
    for name in ZEEK_REQUIRED_FIELDS:
        if name not in record:
            raise KeyError(name)
        if record[name] == "-" and name != "status_code":
            raise ValueError(f"required field {name} unset")
    ts = int(Decimal(record["ts"]) * 1_000_000)
    status = 0 if record["status_code"] == "-" else int(record["status_code"])
    return TrafficEvent(
        ts=ts,
        orig_host=record["id.orig_h"],
        orig_port=int(record["id.orig_p"]),
        resp_host=record["id.resp_h"],
        resp_port=int(record["id.resp_p"]),
        method=record["method"],
        uri=record["uri"],
        status=status,
    )


def _parse_jsonl(lines: list[str]) -> tuple[list[TrafficEvent], int]:
    events: list[TrafficEvent] = []
    skipped = 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            events.append(TrafficEvent.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError):
            skipped += 1
    return events, skipped


def merge_logs(logs: list[CaptureLog]) -> CaptureLog:
    """Merge per-proxy logs into one chronology; input order breaks ts ties."""
    if not logs:
        raise EmptyInput("nothing to merge")
    run_ids = {log.run_id for log in logs}
    if len(run_ids) > 1:
        raise MixedRuns(f"logs from different runs: {sorted(run_ids)}")
    merged = [e for log in logs for e in log.events]
    merged.sort(key=lambda e: e.ts)  # stable
    return CaptureLog(
        run_id=logs[0].run_id,
        events=merged,
        skipped_records=sum(log.skipped_records for log in logs),
    )


def write_jsonl(log: CaptureLog, path: str) -> None:
    """Write a CaptureLog in the native-jsonl on-disk format."""
    with open(path, "w", encoding="utf-8") as fh:
        for event in log.events:
            fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")


def free_port(host: str = "127.0.0.1") -> int:
    """An OS-assigned free TCP port (racy by nature; fine for tests/demos)."""
    with socket.socket() as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]
