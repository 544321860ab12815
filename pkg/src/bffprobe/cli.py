"""Command line interface: run, report, list, serve, ingest, harness."""

from __future__ import annotations

import argparse
import json
import sys
import time

from . import __version__, report as report_mod
from .control import InvalidConfig, RunConfig, RunManager, create_app, load_run_config
from .harness import default_fault_schedule, load_fault_schedule, start_harness
from .store import RunStore


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bffprobe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a fuzz/capture run from a config file")
    p_run.add_argument("--config", required=True, help="run config (JSON or YAML)")
    p_run.add_argument("--spec", help="override the OpenAPI spec path from the config")
    p_run.add_argument("--store", default="./runs", help="run store directory")

    p_report = sub.add_parser("report", help="write report files for a stored run")
    p_report.add_argument("run_id")
    p_report.add_argument("--format", choices=("json", "text"), default="text", help="what to print")
    p_report.add_argument("--store", default="./runs")
    p_report.add_argument("--out-dir", default=".", help="where report and graph files go")

    p_list = sub.add_parser("list", help="list stored runs, newest first")
    p_list.add_argument("--store", default="./runs")
    p_list.add_argument("--status", choices=("running", "completed", "aborted"))
    p_list.add_argument("--since", type=int, help="only runs created at/after this epoch-µs time")

    p_serve = sub.add_parser("serve", help="serve the control HTTP API")
    p_serve.add_argument("--port", type=int, default=8023)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--store", default="./runs")
    p_serve.add_argument("--ui", help="directory with the built inspector UI to serve at /")

    p_ingest = sub.add_parser("ingest", help="analyze a previously captured traffic log")
    p_ingest.add_argument("--log", required=True)
    p_ingest.add_argument("--dialect", required=True, choices=("zeek-http", "native-jsonl"))
    p_ingest.add_argument("--bff", required=True, help="the BFF's host:port in the log")
    p_ingest.add_argument("--spec", help="OpenAPI spec for coverage accounting")
    p_ingest.add_argument("--patterns", help="extra leak patterns (JSONL)")
    p_ingest.add_argument("--store", default="./runs")

    p_harness = sub.add_parser("harness", help="start the fault-injectable testbed")
    p_harness.add_argument("--faults", help="fault schedule JSON (default: shipped demo schedule)")
    p_harness.add_argument("--base-port", type=int, help="bff, catalog, orders, users on consecutive ports")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return {
        "run": _cmd_run,
        "report": _cmd_report,
        "list": _cmd_list,
        "serve": _cmd_serve,
        "ingest": _cmd_ingest,
        "harness": _cmd_harness,
    }[args.command](args)


def _cmd_run(args) -> int:
    config = load_run_config(args.config)
    if args.spec:
        from dataclasses import replace

        config = replace(config, spec_path=args.spec)
    manager = RunManager(RunStore(args.store))
    run_id = manager.start_run(config)
    print(f"run {run_id} started ({config.mode})")
    status = manager.get_status(run_id)
    while status.phase not in ("done", "failed"):
        time.sleep(0.5)
        status = manager.get_status(run_id)
        if status.budget_sequences:
            print(f"  {status.phase}: {status.sequences_done}/{status.budget_sequences}", end="\r")
    print()
    if status.phase == "failed":
        print(f"run {run_id} failed: {status.last_error}", file=sys.stderr)
        return 1
    record = manager.store.load_run(run_id)
    counts = record.finding_counts()
    print(f"run {run_id} done: {len(record.trace_map.entries)} traces, findings {counts or 'none'}")
    print(f"report: bffprobe report {run_id} --store {args.store}")
    return 0


def _cmd_report(args) -> int:
    import os

    store = RunStore(args.store)
    record = store.load_run(args.run_id)
    if record.summary is None:
        print(f"run {args.run_id} has no report (status {record.status})", file=sys.stderr)
        return 1
    error_report = report_mod.render_error_report(record)
    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    for fmt in ("json", "text"):
        path = os.path.join(args.out_dir, f"report.{'json' if fmt == 'json' else 'txt'}")
        with open(path, "wb") as fh:
            fh.write(report_mod.export_report(error_report, fmt))
        written.append(path)
    finding_traces = sorted({f.trace for f in record.findings})
    for trace_id in finding_traces:
        entry = record.trace_map.entry(trace_id)
        graph = report_mod.build_graph(entry, record.findings)
        path = os.path.join(args.out_dir, f"graph-{trace_id}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(graph.to_dict(), fh, sort_keys=True, indent=2)
        written.append(path)
    sys.stdout.write(report_mod.export_report(error_report, args.format).decode())
    print(f"\nwrote: {', '.join(written)}", file=sys.stderr)
    return 0


def _cmd_list(args) -> int:
    store = RunStore(args.store)
    rows = store.list_runs(status=args.status, since=args.since)
    if not rows:
        print("(no runs)")
        return 0
    print(f"{'RUN ID':<26}  {'CREATED (UTC)':<20}  {'STATUS':<10}  FINDINGS")
    for row in rows:
        created = time.strftime("%Y-%m-%d %H:%M:%S", time.gmtime(row["created_at"] / 1_000_000))
        counts = row.get("finding_counts") or {}
        summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "-"
        print(f"{row['run_id']:<26}  {created:<20}  {row['status']:<10}  {summary}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    manager = RunManager(RunStore(args.store))
    app = create_app(manager)
    if args.ui:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.ui, html=True), name="ui")
    print(f"control API on http://{args.host}:{args.port}  (store: {args.store})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_ingest(args) -> int:
    config = RunConfig.from_dict(
        {
            "mode": "ingest-only",
            "bff": args.bff,
            "spec_path": args.spec,
            "patterns_path": args.patterns,
            "ingest": {"log_path": args.log, "dialect": args.dialect},
        }
    )
    manager = RunManager(RunStore(args.store))
    try:
        run_id = manager.start_run(config, wait=True)
    except InvalidConfig as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    status = manager.get_status(run_id)
    if status.phase == "failed":
        print(f"ingest failed: {status.last_error}", file=sys.stderr)
        return 1
    record = manager.store.load_run(run_id)
    print(f"run {run_id}: {len(record.trace_map.entries)} traces, "
          f"{len(record.trace_map.orphans)} orphans, findings {record.finding_counts() or 'none'}")
    if record.trace_map.warnings:
        print(f"warnings: {', '.join(record.trace_map.warnings)}")
    print(f"report: bffprobe report {run_id} --store {args.store}")
    return 0


def _cmd_harness(args) -> int:
    schedule = load_fault_schedule(args.faults) if args.faults else default_fault_schedule()
    ports = None
    if args.base_port:
        ports = {
            "bff": args.base_port,
            "catalog": args.base_port + 1,
            "orders": args.base_port + 2,
            "users": args.base_port + 3,
        }
    handle = start_harness(schedule, ports=ports)
    print("testbed up:")
    print(f"  bff      http://{handle.bff_endpoint}   (spec at /openapi.json)")
    for name in ("catalog", "orders", "users"):
        print(f"  {name:<8} http://{handle.backend_endpoint(name)}")
    print("Ctrl-C to stop")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
