import contextlib
import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from bffprobe import api_model, capture, harness


@pytest.fixture(scope="session")
def fixture_spec_bytes() -> bytes:
    return harness.fixture_spec_document()


@pytest.fixture(scope="session")
def fixture_model(fixture_spec_bytes):
    return api_model.parse_spec(fixture_spec_bytes, "json")


class StubUpstream:
    """Minimal upstream whose responses the test scripts per-path."""

    def __init__(self):
        self.routes = {}  # path -> (status, headers, body bytes)
        self.default = (200, {"Content-Type": "application/json"}, b'{"ok": true}')
        self.requests = []

        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def _serve(self):
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                stub.requests.append((self.command, self.path, body, dict(self.headers.items())))
                status, headers, payload = stub.routes.get(self.path, stub.default)
                self.send_response(status)
                for name, value in headers.items():
                    self.send_header(name, value)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = _serve

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.port = self.server.server_address[1]
        self.endpoint = f"127.0.0.1:{self.port}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def stop(self):
        self.server.shutdown()
        self.thread.join(timeout=5)
        self.server.server_close()


@pytest.fixture
def stub_upstream():
    stub = StubUpstream()
    yield stub
    stub.stop()


@dataclass
class LiveStack:
    """Harness + recording proxies wired the way a live run deploys them."""

    harness: harness.HarnessHandle
    bff_proxy: capture.RecordingProxy
    backend_proxies: dict = field(default_factory=dict)
    run_id: str = "test-run"

    @property
    def fuzz_target(self) -> str:
        return f"http://{self.bff_proxy.listen}"

    def stop_and_merge(self) -> capture.CaptureLog:
        logs = [self.bff_proxy.stop()]
        logs += [p.stop() for p in self.backend_proxies.values()]
        self.harness.stop()
        return capture.merge_logs(logs)


@contextlib.contextmanager
def live_stack(schedule=None, run_id="test-run"):
    ports = {name: capture.free_port() for name in harness.SERVICES}
    backend_proxies = {
        name: capture.start_proxy("127.0.0.1:0", f"127.0.0.1:{ports[name]}", run_id)
        for name in ("catalog", "orders", "users")
    }
    handle = harness.start_harness(
        schedule,
        ports=ports,
        backend_urls={name: f"http://{proxy.listen}" for name, proxy in backend_proxies.items()},
    )
    bff_proxy = capture.start_proxy("127.0.0.1:0", handle.bff_endpoint, run_id)
    stack = LiveStack(handle, bff_proxy, backend_proxies, run_id)
    try:
        yield stack
    finally:
        # stop_and_merge may have run already; stopping twice is harmless
        with contextlib.suppress(Exception):
            stack.bff_proxy.stop()
        for proxy in stack.backend_proxies.values():
            with contextlib.suppress(Exception):
                proxy.stop()
        with contextlib.suppress(Exception):
            stack.harness.stop()


def make_event(ts, dest, orig=("10.0.0.2", 44001), method="GET", uri="/", status=200, **kw):
    host, port = dest.split(":")
    return capture.TrafficEvent(
        ts=ts,
        orig_host=orig[0],
        orig_port=orig[1],
        resp_host=host,
        resp_port=int(port),
        method=method,
        uri=uri,
        status=status,
        **kw,
    )
