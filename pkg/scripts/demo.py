#!/usr/bin/env python3
"""End-to-end demo on the built-in testbed.

Starts the simulated BFF system with the shipped fault schedule, fuzzes it
through recording proxies, and prints the resulting error report.  Run
artifacts land in ./demo-runs so `bffprobe report <run_id>` works afterwards.

Usage: python scripts/demo.py [--sequences N] [--store DIR]
"""

import argparse
import sys
import tempfile

from bffprobe import capture, harness, report
from bffprobe.control import RunConfig, RunManager
from bffprobe.store import RunStore


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sequences", type=int, default=30)
    parser.add_argument("--store", default="./demo-runs")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    ports = {name: capture.free_port() for name in harness.SERVICES}
    proxy_ports = {name: capture.free_port() for name in ("catalog", "orders", "users")}
    handle = harness.start_harness(
        harness.default_fault_schedule(),
        ports=ports,
        backend_urls={name: f"http://127.0.0.1:{port}" for name, port in proxy_ports.items()},
    )
    print(f"testbed BFF at {handle.bff_endpoint}, backends on "
          + ", ".join(str(ports[n]) for n in ("catalog", "orders", "users")))

    with tempfile.NamedTemporaryFile(suffix=".json", delete=False) as fh:
        fh.write(handle.spec_document)
        spec_path = fh.name

    config = RunConfig.from_dict(
        {
            "mode": "live-proxy",
            "spec_path": spec_path,
            "bff": handle.bff_endpoint,
            "backend_proxies": [
                {"listen": f"127.0.0.1:{proxy_ports[name]}", "upstream": f"127.0.0.1:{ports[name]}"}
                for name in ("catalog", "orders", "users")
            ],
            "fuzz": {"budget_sequences": args.sequences, "quiescence_ms": 50, "seed": args.seed},
        }
    )

    manager = RunManager(RunStore(args.store))
    try:
        run_id = manager.start_run(config, wait=True)
    finally:
        handle.stop()

    status = manager.get_status(run_id)
    if status.phase != "done":
        print(f"run failed: {status.last_error}", file=sys.stderr)
        return 1

    record = manager.store.load_run(run_id)
    sys.stdout.write(report.export_report(report.render_error_report(record), "text").decode())
    print(f"\nstored as {run_id} in {args.store}")
    print(f"explore with: bffprobe report {run_id} --store {args.store}")
    print(f"         or: bffprobe serve --store {args.store}  (then open the inspector UI)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
