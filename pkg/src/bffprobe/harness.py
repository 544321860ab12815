"""Self-contained testbed: one BFF fanning out to three backends.

The BFF serves the six fixture operations and aggregates a catalog service,
an order service, and a user service.  Faults are injected from a schedule of
(route, trigger, behavior) rules that can fire at the BFF or at any backend.
Every sub-request the BFF emits carries a diagnostic ``X-Trace-Oracle``
header naming the main request that caused it, and the BFF echoes that id on
its own response; analyzers must never rely on it, tests use it as ground
truth.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.parse
import urllib.request
import urllib.error
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources

from .capture import BindFailed
from .correlate import ORACLE_HEADER

TRIGGER_KINDS = ("always", "nth-request", "param-equals")
BEHAVIOR_KINDS = (
    "status-500-with-stacktrace",
    "status-500-sanitized",
    "status-503",
    "delay",
    "forward-exception-through-bff",
)
RUNTIMES = ("java", "python", "node")

STACK_TRACES = {
    "java": (
        "java.lang.RuntimeException: simulated backend failure\n"
        "\tat com.shop.orders.OrderService.load(OrderService.java:42)\n"
        "\tat com.shop.orders.OrderController.get(OrderController.java:27)\n"
        "\tat java.base/java.lang.Thread.run(Thread.java:833)\n"
    ),
    "python": (
        "Traceback (most recent call last):\n"
        '  File "/app/service.py", line 88, in handle\n'
        "    return views.render(request)\n"
        '  File "/app/views.py", line 31, in render\n'
        '    raise ValueError("simulated backend failure")\n'
        "ValueError: simulated backend failure\n"
    ),
    "node": (
        "TypeError: Cannot read properties of undefined (reading 'id')\n"
        "    at OrderService.load (/app/services/orders.js:42:17)\n"
        "    at process.processTicksAndRejections (node:internal/process/task_queues:95:5)\n"
    ),
}

SERVICES = ("bff", "catalog", "orders", "users")

# method, path pattern, placeholder names by segment index
ROUTE_TABLE = {
    "bff": [
        ("GET", "/products", {}),
        ("GET", "/products/{productId}", {1: "productId"}),
        ("POST", "/orders", {}),
        ("GET", "/orders/{orderId}", {1: "orderId"}),
        ("POST", "/users", {}),
        ("GET", "/users/{userId}", {1: "userId"}),
    ],
    "catalog": [
        ("GET", "/items", {}),
        ("GET", "/items/{itemId}", {1: "itemId"}),
        ("GET", "/health", {}),
    ],
    "orders": [
        ("GET", "/stats/top", {}),
        ("POST", "/records", {}),
        ("GET", "/records/{orderId}", {1: "orderId"}),
        ("GET", "/records", {}),
        ("GET", "/health", {}),
    ],
    "users": [
        ("POST", "/accounts", {}),
        ("GET", "/accounts/{userId}", {1: "userId"}),
        ("GET", "/health", {}),
    ],
}


class UnknownRoute(Exception):
    """A fault rule's route matches no harness endpoint."""


@dataclass(frozen=True)
class FaultRule:
    route: str  # "METHOD /path" with * or {name} wildcards per segment
    trigger: dict  # {"kind": "always"} | {"kind": "nth-request", "n": int}
    #              | {"kind": "param-equals", "name": str, "value": str}
    behavior: dict  # {"kind": ..., "runtime": ..., "ms": ...}

    def __post_init__(self):
        kind = self.trigger.get("kind")
        if kind not in TRIGGER_KINDS:
            raise ValueError(f"unknown trigger {kind!r}")
        if kind == "nth-request" and int(self.trigger.get("n", 0)) < 1:
            raise ValueError("nth-request needs n >= 1")
        if kind == "param-equals" and not self.trigger.get("name"):
            raise ValueError("param-equals needs a param name")
        bkind = self.behavior.get("kind")
        if bkind not in BEHAVIOR_KINDS:
            raise ValueError(f"unknown behavior {bkind!r}")
        runtime = self.behavior.get("runtime")
        if runtime is not None and runtime not in RUNTIMES:
            raise ValueError(f"unknown runtime {runtime!r}")

    def to_dict(self) -> dict:
        return {"route": self.route, "trigger": dict(self.trigger), "behavior": dict(self.behavior)}


@dataclass
class FaultSchedule:
    rules: list[FaultRule] = field(default_factory=list)

    def __post_init__(self):
        known = [
            (method, pattern)
            for routes in ROUTE_TABLE.values()
            for method, pattern, _ in routes
        ]
        for rule in self.rules:
            method, pattern = _split_route(rule.route)
            if not any(
                method == m and _patterns_compatible(pattern, p) for m, p in known
            ):
                raise UnknownRoute(rule.route)

    def to_dict(self) -> dict:
        return {"rules": [r.to_dict() for r in self.rules]}

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSchedule":
        return cls(rules=[FaultRule(r["route"], r["trigger"], r["behavior"]) for r in d.get("rules", [])])


def load_fault_schedule(path: str) -> FaultSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        return FaultSchedule.from_dict(json.load(fh))


def fixture_spec_document() -> bytes:
    """The shipped OpenAPI document describing the testbed BFF."""
    return resources.files("bffprobe.data").joinpath("bff_api.json").read_bytes()


def default_fault_schedule() -> FaultSchedule:
    raw = resources.files("bffprobe.data").joinpath("default_faults.json").read_bytes()
    return FaultSchedule.from_dict(json.loads(raw))


def _split_route(route: str) -> tuple[str, list[str]]:
    try:
        method, path = route.split(" ", 1)
    except ValueError as exc:
        raise ValueError(f"route must be 'METHOD /path', got {route!r}") from exc
    return method.upper(), _segments(path)


def _segments(path: str) -> list[str]:
    return [s for s in path.split("?")[0].split("/") if s]


def _is_wild(segment: str) -> bool:
    return segment == "*" or segment.startswith("{")


def _patterns_compatible(rule_segs: list[str], route_pattern: str) -> bool:
    route_segs = _segments(route_pattern)
    if len(rule_segs) != len(route_segs):
        return False
    return all(
        _is_wild(a) or _is_wild(b) or a == b for a, b in zip(rule_segs, route_segs)
    )


def _match_concrete(rule_segs: list[str], path_segs: list[str]) -> bool:
    if len(rule_segs) != len(path_segs):
        return False
    return all(_is_wild(r) or r == p for r, p in zip(rule_segs, path_segs))


class FaultEngine:
    """Evaluates the schedule for each request a harness service handles."""

    def __init__(self, schedule: FaultSchedule):
        self._rules = [(rule, *_split_route(rule.route)) for rule in schedule.rules]
        self._counts = [0] * len(self._rules)
        self._lock = threading.Lock()

    def check(self, method: str, path: str, params: dict) -> dict | None:
        """Behavior to apply, or None.  delay() sleeps here and returns None."""
        path_segs = _segments(path)
        for idx, (rule, r_method, r_segs) in enumerate(self._rules):
            if method != r_method or not _match_concrete(r_segs, path_segs):
                continue
            trigger = rule.trigger
            kind = trigger["kind"]
            if kind == "nth-request":
                with self._lock:
                    self._counts[idx] += 1
                    fired = self._counts[idx] == int(trigger["n"])
            elif kind == "param-equals":
                fired = str(params.get(trigger["name"])) == str(trigger["value"])
            else:
                fired = True
            if not fired:
                continue
            behavior = rule.behavior
            if behavior["kind"] == "delay":
                time.sleep(int(behavior.get("ms", 100)) / 1000.0)
                continue
            return behavior
        return None


def behavior_response(behavior: dict) -> tuple[int, str, bytes]:
    """(status, content type, body) for a fault behavior."""
    kind = behavior["kind"]
    runtime = behavior.get("runtime", "java")
    if kind == "status-500-with-stacktrace":
        return 500, "text/plain", STACK_TRACES[runtime].encode()
    if kind == "status-500-sanitized":
        return 500, "application/json", b'{"error": "internal error"}'
    if kind == "status-503":
        return 503, "application/json", b'{"error": "service unavailable"}'
    if kind == "forward-exception-through-bff":
        body = json.dumps({"error": STACK_TRACES[runtime]}).encode()
        return 200, "application/json", body
    raise ValueError(f"no canned response for behavior {kind!r}")


@dataclass
class _Request:
    method: str
    path: str
    query: dict
    body: bytes
    headers: dict

    def json_body(self):
        if not self.body:
            return None
        try:
            return json.loads(self.body)
        except ValueError:
            return None

    def params(self, service: str) -> dict:
        """Path + query + top-level JSON body params for trigger checks."""
        params = {k: v[0] for k, v in self.query.items()}
        body = self.json_body()
        if isinstance(body, dict):
            for k, v in body.items():
                params.setdefault(k, v)
        segs = _segments(self.path)
        for method, pattern, names in ROUTE_TABLE[service]:
            p_segs = _segments(pattern)
            if method == self.method and _match_concrete(p_segs, segs):
                for idx, name in names.items():
                    params[name] = segs[idx]
                break
        return params


class _Responder:
    """Collects the response a service logic function wants to send."""

    def __init__(self):
        self.status = 500
        self.content_type = "application/json"
        self.body = b'{"error": "unhandled"}'
        self.headers: dict[str, str] = {}

    def json(self, status: int, payload) -> "_Responder":
        self.status = status
        self.content_type = "application/json"
        self.body = json.dumps(payload).encode()
        return self

    def raw(self, status: int, content_type: str, body: bytes) -> "_Responder":
        self.status = status
        self.content_type = content_type
        self.body = body
        return self


class _ServiceHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def _serve(self):
        parsed = urllib.parse.urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        request = _Request(
            method=self.command,
            path=parsed.path,
            query=urllib.parse.parse_qs(parsed.query),
            body=body,
            headers=dict(self.headers.items()),
        )
        responder = _Responder()
        try:
            self.server.logic.handle(request, responder)  # type: ignore[attr-defined]
        except Exception as exc:  # harness bug; keep the server alive
            responder.json(500, {"error": f"harness fault: {exc}"})
        try:
            self.send_response(responder.status)
            self.send_header("Content-Type", responder.content_type)
            self.send_header("Content-Length", str(len(responder.body)))
            for name, value in responder.headers.items():
                self.send_header(name, value)
            self.end_headers()
            self.wfile.write(responder.body)
        except OSError:
            pass

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = _serve


class _BackendLogic:
    """One of the three backends: routes requests, applies faults, serves data."""

    def __init__(self, name: str, engine: FaultEngine, stores: "_Stores"):
        self.name = name
        self.engine = engine
        self.stores = stores

    def handle(self, request: _Request, out: _Responder) -> None:
        fault = self.engine.check(request.method, request.path, request.params(self.name))
        if fault:
            out.raw(*behavior_response(fault))
            return
        getattr(self, f"_{self.name}")(request, out)

    def _catalog(self, request: _Request, out: _Responder) -> None:
        segs = _segments(request.path)
        if request.method == "GET" and segs == ["health"]:
            out.json(200, {"ok": True})
        elif request.method == "GET" and segs == ["items"]:
            items = list(self.stores.items.values())
            limit = request.query.get("limit", [None])[0]
            if limit is not None and str(limit).isdigit():
                items = items[: int(limit)]
            out.json(200, {"items": items})
        elif request.method == "GET" and len(segs) == 2 and segs[0] == "items":
            item = self.stores.items.get(segs[1])
            if item is None:
                out.json(404, {"error": "unknown item"})
            else:
                out.json(200, item)
        else:
            out.json(404, {"error": "no such route"})

    def _orders(self, request: _Request, out: _Responder) -> None:
        segs = _segments(request.path)
        if request.method == "GET" and segs == ["health"]:
            out.json(200, {"ok": True})
        elif request.method == "GET" and segs == ["stats", "top"]:
            out.json(200, [{"productId": "p1", "orders": 3}, {"productId": "p2", "orders": 1}])
        elif request.method == "POST" and segs == ["records"]:
            payload = request.json_body() or {}
            record = self.stores.create_order(payload)
            out.json(201, {"orderId": record["orderId"], "status": record["status"]})
        elif request.method == "GET" and segs == ["records"]:
            user = request.query.get("userId", [None])[0]
            records = [
                {"orderId": rec["orderId"]}
                for rec in self.stores.orders.values()
                if user is None or rec.get("userId") == user
            ]
            out.json(200, records)
        elif request.method == "GET" and len(segs) == 2 and segs[0] == "records":
            record = self.stores.orders.get(segs[1])
            if record is None:
                out.json(404, {"error": "unknown order"})
            else:
                out.json(200, {k: record[k] for k in ("orderId", "userId", "productId", "status")})
        else:
            out.json(404, {"error": "no such route"})

    def _users(self, request: _Request, out: _Responder) -> None:
        segs = _segments(request.path)
        if request.method == "GET" and segs == ["health"]:
            out.json(200, {"ok": True})
        elif request.method == "POST" and segs == ["accounts"]:
            payload = request.json_body() or {}
            if not payload.get("fullName"):
                out.json(400, {"error": "fullName required"})
                return
            account = self.stores.create_user(payload)
            out.json(201, {"id": account["id"], "fullName": account["fullName"]})
        elif request.method == "GET" and len(segs) == 2 and segs[0] == "accounts":
            account = self.stores.users.get(segs[1])
            if account is None:
                out.json(404, {"error": "unknown user"})
            else:
                out.json(200, account)
        else:
            out.json(404, {"error": "no such route"})


class _Stores:
    """Shared in-memory data; no persistence by design."""

    def __init__(self):
        self._lock = threading.Lock()
        self.items = {
            "p1": {"id": "p1", "name": "Widget", "price": 9.99},
            "p2": {"id": "p2", "name": "Gadget", "price": 19.5},
            "p3": {"id": "p3", "name": "Doohickey", "price": 3.25},
        }
        self.users = {
            "u1": {"id": "u1", "fullName": "Ada Lovelace", "email": "ada@example.com"},
            "u2": {"id": "u2", "fullName": "Alan Turing", "email": "alan@example.com"},
        }
        self.orders = {
            "o1": {"orderId": "o1", "userId": "u1", "productId": "p1", "quantity": 1, "status": "created"},
        }
        self._order_seq = 1

    def create_order(self, payload: dict) -> dict:
        with self._lock:
            self._order_seq += 1
            order_id = f"o{self._order_seq}"
            record = {
                "orderId": order_id,
                "userId": str(payload.get("userId", "")),
                "productId": str(payload.get("productId", "")),
                "quantity": payload.get("quantity", 0),
                "status": "created",
            }
            self.orders[order_id] = record
            return record

    def create_user(self, payload: dict) -> dict:
        with self._lock:
            account_id = f"u{len(self.users) + 1}"
            account = {
                "id": account_id,
                "fullName": str(payload.get("fullName", "")),
                "email": str(payload.get("email", "")),
            }
            self.users[account_id] = account
            return account


class _BffLogic:
    """The gateway: fans main requests out to the backends and aggregates."""

    def __init__(self, engine: FaultEngine, backend_urls: dict, oracle: "_OracleLog", spec_document: bytes):
        self.engine = engine
        self.backend_urls = backend_urls  # service name -> "http://host:port"
        self.oracle = oracle
        self.spec_document = spec_document

    def handle(self, request: _Request, out: _Responder) -> None:
        if request.method == "GET" and request.path == "/openapi.json":
            out.raw(200, "application/json", self.spec_document)
            return
        main_id = self.oracle.new_main(request.method, request.path)
        out.headers[ORACLE_HEADER] = main_id
        fault = self.engine.check(request.method, request.path, request.params("bff"))
        if fault:
            out.raw(*behavior_response(fault))
            return
        segs = _segments(request.path)
        if request.method == "GET" and segs == ["products"]:
            self._list_products(main_id, request, out)
        elif request.method == "GET" and len(segs) == 2 and segs[0] == "products":
            self._get_product(main_id, segs[1], out)
        elif request.method == "POST" and segs == ["orders"]:
            self._create_order(main_id, request, out)
        elif request.method == "GET" and len(segs) == 2 and segs[0] == "orders":
            self._get_order(main_id, segs[1], out)
        elif request.method == "POST" and segs == ["users"]:
            self._create_user(main_id, request, out)
        elif request.method == "GET" and len(segs) == 2 and segs[0] == "users":
            self._get_user(main_id, segs[1], out)
        else:
            out.json(404, {"error": "no such route"})

    # -- backend plumbing ---------------------------------------------------

    def _call(self, main_id: str, service: str, method: str, path: str, payload=None):
        """One sub-request.  Returns (status, parsed-or-text body)."""
        url = self.backend_urls[service] + path
        self.oracle.add_sub(main_id, service, method, path)
        data = json.dumps(payload).encode() if payload is not None else None
        req = urllib.request.Request(url, data=data, method=method)
        req.add_header(ORACLE_HEADER, main_id)
        if data is not None:
            req.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(req, timeout=10) as resp:
                raw = resp.read()
                status = resp.status
        except urllib.error.HTTPError as exc:
            raw = exc.read()
            status = exc.code
        except OSError:
            return 502, {"error": "backend unreachable"}
        try:
            return status, json.loads(raw)
        except ValueError:
            return status, raw.decode("utf-8", errors="replace")

    @staticmethod
    def _sanitized(out: _Responder, status: int) -> None:
        out.json(status, {"error": "upstream failure"})

    # -- endpoints ----------------------------------------------------------

    def _list_products(self, main_id: str, request: _Request, out: _Responder) -> None:
        query = ""
        limit = request.query.get("limit", [None])[0]
        if limit is not None:
            query = "?" + urllib.parse.urlencode({"limit": limit})
        warnings = []
        result: dict = {}
        status, body = self._call(main_id, "catalog", "GET", "/items" + query)
        if status == 200:
            result["items"] = body.get("items", body) if isinstance(body, dict) else body
        else:
            warnings.append("catalog unavailable")
        status, body = self._call(main_id, "orders", "GET", "/stats/top")
        if status == 200:
            result["top"] = body
        else:
            warnings.append("order stats unavailable")
        if warnings:
            result["warnings"] = warnings
        out.json(200, result)

    def _get_product(self, main_id: str, product_id: str, out: _Responder) -> None:
        status, body = self._call(main_id, "catalog", "GET", f"/items/{product_id}")
        if status >= 500:
            self._sanitized(out, status)
        elif status == 404:
            out.json(404, {"error": "unknown product"})
        else:
            out.json(status, body)

    def _create_order(self, main_id: str, request: _Request, out: _Responder) -> None:
        payload = request.json_body()
        if not isinstance(payload, dict):
            out.json(400, {"error": "invalid JSON body"})
            return
        missing = [k for k in ("userId", "productId", "quantity") if k not in payload]
        if missing:
            out.json(400, {"error": f"missing fields: {', '.join(missing)}"})
            return
        status, body = self._call(main_id, "users", "GET", f"/accounts/{payload['userId']}")
        if status >= 500:
            self._sanitized(out, status)
            return
        if status == 404:
            out.json(400, {"error": "unknown user"})
            return
        status, body = self._call(main_id, "orders", "POST", "/records", payload)
        if status >= 500:
            self._sanitized(out, status)
        else:
            out.json(status, body)

    def _get_order(self, main_id: str, order_id: str, out: _Responder) -> None:
        status, body = self._call(main_id, "orders", "GET", f"/records/{order_id}")
        if status >= 500:
            self._sanitized(out, status)
            return
        if status == 404:
            out.json(404, {"error": "unknown order"})
            return
        result = body if isinstance(body, dict) else {"record": body}
        product_id = result.get("productId") if isinstance(result, dict) else None
        if product_id:
            status, item = self._call(main_id, "catalog", "GET", f"/items/{product_id}")
            if status >= 500:
                self._sanitized(out, status)
                return
            if status == 200:
                result["item"] = item
        user_id = result.pop("userId", None) if isinstance(result, dict) else None
        if user_id:
            status, buyer = self._call(main_id, "users", "GET", f"/accounts/{user_id}")
            if status >= 500:
                self._sanitized(out, status)
                return
            if status == 200:
                result["buyer"] = buyer
        out.json(200, result)

    def _create_user(self, main_id: str, request: _Request, out: _Responder) -> None:
        payload = request.json_body()
        if not isinstance(payload, dict):
            out.json(400, {"error": "invalid JSON body"})
            return
        status, body = self._call(main_id, "users", "POST", "/accounts", payload)
        if status >= 500:
            self._sanitized(out, status)
        else:
            out.json(status, body)

    def _get_user(self, main_id: str, user_id: str, out: _Responder) -> None:
        status, body = self._call(main_id, "users", "GET", f"/accounts/{user_id}")
        if status >= 500:
            self._sanitized(out, status)
            return
        if status == 404:
            out.json(404, {"error": "unknown user"})
            return
        profile = {"id": body.get("id"), "fullName": body.get("fullName")} if isinstance(body, dict) else {}
        status, records = self._call(main_id, "orders", "GET", f"/records?userId={urllib.parse.quote(user_id)}")
        if status >= 500:
            self._sanitized(out, status)
            return
        profile["orders"] = records if isinstance(records, list) else []
        out.json(200, profile)


class _OracleLog:
    """Ground-truth main/sub mapping from the BFF's own bookkeeping."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seq = 0
        self.mains: list[dict] = []
        self.subs: dict[str, list[dict]] = {}

    def new_main(self, method: str, path: str) -> str:
        with self._lock:
            self._seq += 1
            main_id = f"m{self._seq:06d}"
            self.mains.append({"id": main_id, "method": method, "path": path, "ts": time.time_ns() // 1000})
            self.subs[main_id] = []
            return main_id

    def add_sub(self, main_id: str, service: str, method: str, path: str) -> None:
        with self._lock:
            self.subs[main_id].append(
                {"service": service, "method": method, "path": path, "ts": time.time_ns() // 1000}
            )

    def mapping(self) -> dict[str, list[dict]]:
        with self._lock:
            return {m["id"]: list(self.subs[m["id"]]) for m in self.mains}


@dataclass
class HarnessHandle:
    ports: dict[str, int]
    servers: dict[str, ThreadingHTTPServer]
    threads: dict[str, threading.Thread]
    oracle: _OracleLog
    spec_document: bytes

    @property
    def bff_endpoint(self) -> str:
        return f"127.0.0.1:{self.ports['bff']}"

    @property
    def bff_url(self) -> str:
        return f"http://{self.bff_endpoint}"

    def backend_endpoint(self, service: str) -> str:
        return f"127.0.0.1:{self.ports[service]}"

    def oracle_trace_map(self) -> dict[str, list[dict]]:
        return self.oracle.mapping()

    def stop(self) -> None:
        for server in self.servers.values():
            server.shutdown()
        for thread in self.threads.values():
            thread.join(timeout=10)
        for server in self.servers.values():
            server.server_close()


def start_harness(
    schedule: FaultSchedule | None = None,
    ports: dict[str, int] | None = None,
    backend_urls: dict[str, str] | None = None,
) -> HarnessHandle:
    """Start the four services.  ``backend_urls`` reroutes the BFF's
    sub-requests (e.g. through recording proxies); default is direct."""
    schedule = schedule or FaultSchedule()
    ports = dict(ports) if ports else {name: 0 for name in SERVICES}  # 0 = OS-assigned
    engine = FaultEngine(schedule)
    stores = _Stores()
    oracle = _OracleLog()
    spec_document = fixture_spec_document()

    servers: dict[str, ThreadingHTTPServer] = {}
    threads: dict[str, threading.Thread] = {}
    try:
        for name in SERVICES:
            server = ThreadingHTTPServer(("127.0.0.1", ports.get(name, 0)), _ServiceHandler)
            servers[name] = server
            ports[name] = server.server_address[1]
    except OSError as exc:
        for server in servers.values():
            server.server_close()
        raise BindFailed(str(exc)) from exc

    if backend_urls is None:
        backend_urls = {name: f"http://127.0.0.1:{ports[name]}" for name in SERVICES if name != "bff"}
    for name in ("catalog", "orders", "users"):
        servers[name].logic = _BackendLogic(name, engine, stores)  # type: ignore[attr-defined]
    servers["bff"].logic = _BffLogic(engine, backend_urls, oracle, spec_document)  # type: ignore[attr-defined]

    for name, server in servers.items():
        thread = threading.Thread(
            target=lambda srv=server: srv.serve_forever(poll_interval=0.05),
            daemon=True,
            name=f"harness-{name}",
        )
        thread.start()
        threads[name] = thread
    return HarnessHandle(ports=ports, servers=servers, threads=threads, oracle=oracle, spec_document=spec_document)


def oracle_trace_map(handle: HarnessHandle) -> dict[str, list[dict]]:
    """Ground-truth mapping main-request-id -> ordered sub-request list."""
    return handle.oracle_trace_map()
