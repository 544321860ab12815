"""Run orchestration: configure, fuzz, capture, correlate, classify, persist.

Two modes.  ``live-proxy`` drives the full pipeline: recording proxies are
placed in front of the BFF and each backend, the fuzzer sends main requests
through the BFF proxy, and aggregation happens when the budget is spent.
``ingest-only`` skips fuzzing and analyzes a traffic log captured elsewhere.
The HTTP API in ``create_app`` exposes runs, statuses, reports, traces, and
per-trace graphs for the CLI and the inspector UI.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass, field

import yaml
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import capture, classify, correlate, report as report_mod
from .api_model import ApiModel, infer_dependencies, parse_spec_file
from .fuzz import FuzzConfig, TargetUnreachable, execute_sequence, generate_sequences
from .store import NotFound, RunRecord, RunStore, new_run_id

PHASES = ("configuring", "fuzzing", "aggregating", "done", "failed")

MODES = ("live-proxy", "ingest-only")


class InvalidConfig(Exception):
    pass


class PortConflict(Exception):
    pass


class RunActive(Exception):
    """A live-proxy run is already active; the serial contract is global."""


@dataclass(frozen=True)
class ProxySpec:
    listen: str
    upstream: str

    def to_dict(self) -> dict:
        return {"listen": self.listen, "upstream": self.upstream}


@dataclass(frozen=True)
class RunConfig:
    mode: str = "live-proxy"
    spec_path: str | None = None
    bff: str | None = None  # the BFF's real host:port (trace-map key)
    bff_proxy_listen: str | None = None  # where the fuzzer connects; auto if unset
    backend_proxies: tuple[ProxySpec, ...] = ()
    fuzz: FuzzConfig = field(default_factory=FuzzConfig)
    patterns_path: str | None = None
    ingest: dict | None = None  # {"log_path": ..., "dialect": ...}

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if self.mode == "live-proxy":
            if not self.bff:
                raise InvalidConfig("live-proxy mode requires bff")
            if not self.backend_proxies:
                raise InvalidConfig("live-proxy mode requires backend_proxies")
            if not self.spec_path:
                raise InvalidConfig("live-proxy mode requires spec_path")
        else:
            if not self.ingest or not self.ingest.get("log_path") or not self.ingest.get("dialect"):
                raise InvalidConfig("ingest-only mode requires ingest.log_path and ingest.dialect")
            if not self.bff:
                raise InvalidConfig("ingest-only mode requires bff to identify main requests")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "spec_path": self.spec_path,
            "bff": self.bff,
            "bff_proxy_listen": self.bff_proxy_listen,
            "backend_proxies": [p.to_dict() for p in self.backend_proxies],
            "fuzz": self.fuzz.to_dict(),
            "patterns_path": self.patterns_path,
            "ingest": self.ingest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            mode=d.get("mode", "live-proxy"),
            spec_path=d.get("spec_path"),
            bff=d.get("bff"),
            bff_proxy_listen=d.get("bff_proxy_listen"),
            backend_proxies=tuple(
                ProxySpec(p["listen"], p["upstream"]) for p in d.get("backend_proxies", [])
            ),
            fuzz=FuzzConfig.from_dict(d.get("fuzz", {})),
            patterns_path=d.get("patterns_path"),
            ingest=d.get("ingest"),
        )


def load_run_config(path: str) -> RunConfig:
    """Run config from a JSON or YAML file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) if str(path).endswith((".yaml", ".yml")) else json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidConfig("config file must hold a mapping")
    try:
        return RunConfig.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad config: {exc}") from exc


@dataclass
class RunStatus:
    run_id: str
    phase: str
    sequences_done: int = 0
    budget_sequences: int | None = None
    last_error: str | None = None

    @property
    def progress(self) -> float | None:
        if self.budget_sequences:
            return min(1.0, self.sequences_done / self.budget_sequences)
        return None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "phase": self.phase,
            "sequences_done": self.sequences_done,
            "budget_sequences": self.budget_sequences,
            "progress": self.progress,
            "last_error": self.last_error,
        }


class _RunState:
    def __init__(self, run_id: str, config: RunConfig):
        self.status = RunStatus(run_id, "configuring", budget_sequences=config.fuzz.budget_sequences)
        self.config = config
        self.thread: threading.Thread | None = None
        self.model: ApiModel | None = None
        self.sequences = []
        self.logs: list[capture.CaptureLog] = []
        self.aggregated: RunRecord | None = None

    def advance(self, phase: str) -> None:
        order = PHASES.index
        if phase != "failed" and order(phase) < order(self.status.phase):
            raise RuntimeError(f"phase may not go back from {self.status.phase} to {phase}")
        self.status.phase = phase


class RunManager:
    """Owns the store, run lifecycles, and the single-live-run lock."""

    def __init__(self, store: RunStore):
        self.store = store
        self._runs: dict[str, _RunState] = {}
        self._lock = threading.Lock()
        self._live_lock = threading.Lock()

    # -- lifecycle -----------------------------------------------------------

    def start_run(self, config: RunConfig, wait: bool = False) -> str:
        config.validate()
        if config.mode == "live-proxy":
            if self._live_lock.locked():
                raise RunActive("a live-proxy run is already active")
            self._preflight_live(config)
        run_id = new_run_id()
        state = _RunState(run_id, config)
        with self._lock:
            self._runs[run_id] = state
        state.thread = threading.Thread(target=self._drive, args=(state,), daemon=True)
        state.thread.start()
        if wait:
            self.wait(run_id)
        return run_id

    def wait(self, run_id: str, timeout: float | None = None) -> RunStatus:
        state = self._state(run_id)
        if state.thread:
            state.thread.join(timeout)
        return state.status

    def get_status(self, run_id: str) -> RunStatus:
        with self._lock:
            state = self._runs.get(run_id)
        if state is not None:
            return state.status
        record = self.store.load_run(run_id)  # raises NotFound
        phase = {"completed": "done", "aborted": "failed", "running": "fuzzing"}[record.status]
        return RunStatus(run_id, phase)

    def _state(self, run_id: str) -> _RunState:
        with self._lock:
            if run_id not in self._runs:
                raise NotFound(run_id)
            return self._runs[run_id]

    # -- preflight -----------------------------------------------------------

    @staticmethod
    def _preflight_live(config: RunConfig) -> None:
        for spec in config.backend_proxies:
            _check_bindable(spec.listen)
        if config.bff_proxy_listen:
            _check_bindable(config.bff_proxy_listen)
        host, port = capture.split_endpoint(config.bff)
        try:
            with socket.create_connection((host, port), timeout=5):
                pass
        except OSError as exc:
            raise TargetUnreachable(f"BFF {config.bff} not reachable: {exc}") from exc

    # -- pipeline ------------------------------------------------------------

    def _drive(self, state: _RunState) -> None:
        try:
            if state.config.mode == "live-proxy":
                with self._live_lock:
                    self._drive_live(state)
            else:
                self._drive_ingest(state)
        except Exception as exc:  # any failure parks the run in "failed"
            state.status.last_error = f"{exc.__class__.__name__}: {exc}"
            state.status.phase = "failed"
            self._persist(state, status="aborted")

    def _drive_live(self, state: _RunState) -> None:
        config = state.config
        run_id = state.status.run_id
        state.model = parse_spec_file(config.spec_path)
        deps = infer_dependencies(state.model)

        proxies: list[capture.RecordingProxy] = []
        try:
            for spec in config.backend_proxies:
                try:
                    proxies.append(capture.start_proxy(spec.listen, spec.upstream, run_id))
                except capture.BindFailed as exc:
                    raise PortConflict(str(exc)) from exc
            bff_listen = config.bff_proxy_listen or "127.0.0.1:0"
            try:
                bff_proxy = capture.start_proxy(bff_listen, config.bff, run_id)
            except capture.BindFailed as exc:
                raise PortConflict(str(exc)) from exc
            proxies.append(bff_proxy)

            state.advance("fuzzing")
            quiescence = config.fuzz.quiescence_ms / 1000.0
            deadline = (
                time.monotonic() + config.fuzz.budget_seconds if config.fuzz.budget_seconds else None
            )
            headers = dict(config.fuzz.headers)
            for seq in generate_sequences(state.model, deps, config.fuzz):
                if deadline is not None and time.monotonic() >= deadline:
                    break
                result = execute_sequence(
                    state.model, seq, f"http://{bff_proxy.listen}", quiescence, extra_headers=headers
                )
                state.sequences.append(seq)
                state.status.sequences_done += 1
                if result.aborted:
                    state.status.last_error = result.abort_reason
            time.sleep(quiescence)  # let trailing sub-requests reach the proxies
        finally:
            state.logs = [p.stop() for p in proxies]

        state.advance("aggregating")
        self.aggregate(state.status.run_id)
        state.advance("done")

    def _drive_ingest(self, state: _RunState) -> None:
        config = state.config
        if config.spec_path:
            state.model = parse_spec_file(config.spec_path)
        state.logs = [
            capture.ingest_log(
                config.ingest["log_path"], config.ingest["dialect"], run_id=state.status.run_id
            )
        ]
        state.advance("aggregating")
        self.aggregate(state.status.run_id)
        state.advance("done")

    def aggregate(self, run_id: str) -> RunRecord:
        """Merge capture logs, correlate, classify, summarize, persist.

        Equals the composition of the module operations it calls; the only
        state consumed is what fuzzing/capture left in the run state.
        """
        state = self._state(run_id)
        config = state.config
        merged = capture.merge_logs(state.logs) if state.logs else capture.CaptureLog(run_id)
        trace_map = correlate.build_trace_map(merged, config.bff)
        if state.sequences:
            quiescence = config.fuzz.quiescence_ms / 1000.0
            trace_map = correlate.link_sequences(trace_map, state.sequences, quiescence)
        patterns = classify.pattern_set(config.patterns_path)
        findings = classify.classify_run(trace_map, patterns)
        executed = {
            case.operation
            for seq in state.sequences
            for case in seq.cases
            if case.sent_at is not None
        }
        summary = classify.summarize(trace_map, state.model, executed)
        record = RunRecord(
            run_id=run_id,
            created_at=time.time_ns() // 1000,
            config=config.to_dict(),
            status="completed",
            sequences=state.sequences,
            trace_map=trace_map,
            findings=findings,
            summary=summary,
        )
        self.store.save_run(record)
        state.aggregated = record
        return record

    def _persist(self, state: _RunState, status: str) -> None:
        try:
            record = RunRecord(
                run_id=state.status.run_id,
                created_at=time.time_ns() // 1000,
                config=state.config.to_dict(),
                status=status,
                sequences=state.sequences,
            )
            self.store.save_run(record)
        except Exception:
            pass  # the failure already recorded in status.last_error


def _check_bindable(endpoint: str) -> None:
    host, port = capture.split_endpoint(endpoint)
    if port == 0:
        return
    try:
        with socket.socket() as sock:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((host, port))
    except OSError as exc:
        raise PortConflict(f"cannot bind {endpoint}: {exc}") from exc


# -- HTTP API -----------------------------------------------------------------


def create_app(manager: RunManager) -> FastAPI:
    """FastAPI app over a RunManager; errors surface as {code, message}."""
    app = FastAPI(title="bffprobe control service", docs_url=None, redoc_url=None)

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(NotFound)
    async def _not_found(request: Request, exc: NotFound):
        return error(404, "NotFound", str(exc))

    @app.post("/api/runs")
    async def start_run(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return error(400, "InvalidConfig", "request body must be a JSON run config")
        try:
            config = RunConfig.from_dict(payload)
            run_id = manager.start_run(config)
        except InvalidConfig as exc:
            return error(400, "InvalidConfig", str(exc))
        except PortConflict as exc:
            return error(409, "PortConflict", str(exc))
        except TargetUnreachable as exc:
            return error(502, "TargetUnreachable", str(exc))
        except RunActive as exc:
            return error(409, "RunActive", str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            return error(400, "InvalidConfig", f"bad config: {exc}")
        return {"run_id": run_id}

    @app.get("/api/runs")
    async def list_runs(status: str | None = None, since: int | None = None):
        return {"runs": manager.store.list_runs(status=status, since=since)}

    @app.get("/api/runs/{run_id}")
    async def get_status(run_id: str):
        return manager.get_status(run_id).to_dict()

    @app.get("/api/runs/{run_id}/report")
    async def get_report(run_id: str):
        record = manager.store.load_run(run_id)
        if record.summary is None:
            return error(409, "RunNotComplete", f"run {run_id} has no report yet")
        return json.loads(report_mod.export_report(report_mod.render_error_report(record), "json"))

    @app.get("/api/runs/{run_id}/traces")
    async def get_traces(run_id: str):
        record = manager.store.load_run(run_id)
        if record.trace_map is None:
            return error(409, "RunNotComplete", f"run {run_id} has no trace map yet")
        return record.trace_map.to_dict()

    @app.get("/api/runs/{run_id}/graph/{trace_id}")
    async def get_graph(run_id: str, trace_id: str):
        record = manager.store.load_run(run_id)
        if record.trace_map is None:
            return error(409, "RunNotComplete", f"run {run_id} has no trace map yet")
        try:
            entry = record.trace_map.entry(trace_id)
        except KeyError:
            return error(404, "NotFound", f"no trace {trace_id} in run {run_id}")
        graph = report_mod.build_graph(entry, record.findings)
        return graph.to_dict()

    return app
