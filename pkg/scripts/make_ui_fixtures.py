#!/usr/bin/env python3
"""Regenerate the frontend test fixtures from a real testbed run.

Produces, under frontend/tests/fixtures/:
  leak_sub_only.graph.json   one trace with exactly one error-highlighted edge
  leak_sub_only.report.json  the run's error report (evidence excerpts live here)
  leak_sub_only.traces.json  the trace map with captured payloads
  zeek.graph.json            a graph whose events carry no payloads at all
"""

import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from bffprobe import api_model, capture, classify, correlate, harness, report, store
from bffprobe.fuzz import FuzzCase, TestSequence, execute_sequence
from conftest import live_stack

OUT = os.path.join(os.path.dirname(__file__), "..", "frontend", "tests", "fixtures")


def main() -> int:
    os.makedirs(OUT, exist_ok=True)

    # LeakSubOnly with a graceful BFF: catalog throws, /products still 200,
    # so exactly one edge (the catalog sub response) is highlighted.
    schedule = harness.FaultSchedule(
        rules=[
            harness.FaultRule(
                "GET /items",
                {"kind": "always"},
                {"kind": "status-500-with-stacktrace", "runtime": "java"},
            )
        ]
    )
    with live_stack(schedule, run_id="ui-fixture") as stack:
        model = api_model.parse_spec(stack.harness.spec_document, "json")
        seq = TestSequence(id="s0000", cases=[FuzzCase(operation="listProducts", bindings={})])
        execute_sequence(model, seq, stack.fuzz_target, 0.05)
        time.sleep(0.05)
        merged = stack.stop_and_merge()

    trace_map = correlate.build_trace_map(merged, stack.harness.bff_endpoint)
    trace_map = correlate.link_sequences(trace_map, [seq], 0.05)
    findings = classify.classify_run(trace_map, classify.pattern_set())
    categories = [f.category for f in findings]
    # the sub's 500 status makes ServerError5xx co-occur; the leak category
    # must be sub-only and the main response must stay clean/200
    assert classify.CATEGORY_LEAK_SUB_ONLY in categories, categories
    assert classify.CATEGORY_LEAK_BOTH not in categories
    assert classify.CATEGORY_LEAK_MAIN_ONLY not in categories
    summary = classify.summarize(trace_map, model, {"listProducts"})
    record = store.RunRecord(
        run_id="UIFIXTURE0000000000000000",
        created_at=1_700_000_000_000_000,
        config={},
        status="completed",
        sequences=[seq],
        trace_map=trace_map,
        findings=findings,
        summary=summary,
    )
    entry = trace_map.entries[0]
    graph = report.build_graph(entry, findings).to_dict()
    red = [e for e in graph["edges"] if e["error_highlight"]]
    assert len(red) == 1, graph

    error_report = json.loads(report.export_report(report.render_error_report(record), "json"))

    def write(name, payload):
        path = os.path.join(OUT, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print("wrote", os.path.relpath(path))

    write("leak_sub_only.graph.json", graph)
    write("leak_sub_only.report.json", error_report)
    write("leak_sub_only.traces.json", trace_map.to_dict())

    # payload-free graph from the zeek fixture (bodies unavailable)
    zeek_log = capture.ingest_log(
        os.path.join(os.path.dirname(__file__), "..", "tests", "data", "zeek_http_fixture.log"),
        "zeek-http",
        run_id="zeek",
    )
    zeek_map = correlate.build_trace_map(zeek_log, "10.0.0.5:8000")
    zeek_findings = classify.classify_run(zeek_map, classify.pattern_set())
    zeek_graph = report.build_graph(zeek_map.entry("t0001"), zeek_findings).to_dict()
    write("zeek.graph.json", zeek_graph)
    return 0


if __name__ == "__main__":
    sys.exit(main())
