import json
from importlib import resources

import jsonschema
import pytest

from bffprobe.api_model import CoverageStats
from bffprobe.classify import (
    CATEGORY_LEAK_SUB_ONLY,
    CATEGORY_SERVER_ERROR,
    Finding,
    LeakEvidence,
    ReportSummary,
)
from bffprobe.correlate import TraceEntry, TraceMap
from bffprobe.fuzz import FuzzCase, TestSequence
from bffprobe.report import ErrorReport, build_graph, export_report, render_error_report
from bffprobe.store import RunRecord
from conftest import make_event

BFF = "10.0.0.5:8000"
B1 = "10.0.0.6:8081"
B2 = "10.0.0.7:8082"


def load_schema():
    raw = resources.files("bffprobe.data").joinpath("report.schema.json").read_bytes()
    return json.loads(raw)


def empty_summary():
    return ReportSummary(
        coverage=CoverageStats(0, 0, 0.0),
        total_main_requests=0,
        total_responses=0,
        status_histogram={},
        errors_from_bff=0,
        errors_per_backend={},
    )


def record_with(entries=(), findings=(), sequences=(), summary=None):
    return RunRecord(
        run_id="RUNID",
        created_at=1,
        config={},
        status="completed",
        sequences=list(sequences),
        trace_map=TraceMap(bff=BFF, entries=list(entries)),
        findings=list(findings),
        summary=summary or empty_summary(),
    )


def leaky_entry():
    main = make_event(1, BFF, status=200, resp_body=b"{}", resp_headers={"A": "1"})
    sub = make_event(
        2, B1, status=500, resp_body=b"java.lang.RuntimeException\n", req_headers={"B": "2"}
    )
    entry = TraceEntry(entry_id="t0000", main=main, subs=[sub], sequence_ref="s0001/0")
    finding = Finding(
        category=CATEGORY_LEAK_SUB_ONLY,
        trace="t0000",
        evidence=[LeakEvidence("java-stacktrace", "java.lang.RuntimeException", "sub-response(0)")],
        statuses=[200, 500],
    )
    return entry, finding


class TestBuildGraph:
    def test_two_subs_two_backends(self):
        entry = TraceEntry(
            entry_id="t0000",
            main=make_event(1, BFF),
            subs=[make_event(2, B1), make_event(3, B2)],
        )
        graph = build_graph(entry, [])
        assert len(graph.nodes) == 4
        assert len(graph.edges) == 6
        kinds = {n["kind"] for n in graph.nodes}
        assert kinds == {"client", "bff", "backend"}
        assert [n["kind"] for n in graph.nodes].count("client") == 1
        assert [n["kind"] for n in graph.nodes].count("bff") == 1

    def test_no_subs_degenerate(self):
        entry = TraceEntry(entry_id="t0000", main=make_event(1, BFF))
        graph = build_graph(entry, [])
        assert len(graph.nodes) == 2  # client + bff, no backends
        assert len(graph.edges) == 2

    def test_sub_500_highlights_its_response_edge_only(self):
        entry = TraceEntry(
            entry_id="t0000",
            main=make_event(1, BFF, status=200),
            subs=[make_event(2, B1, status=500), make_event(3, B2, status=200)],
        )
        graph = build_graph(entry, [])
        highlighted = [e["id"] for e in graph.edges if e["error_highlight"]]
        assert highlighted == ["sub0-res"]

    def test_leak_finding_highlights_response_edge(self):
        entry, finding = leaky_entry()
        graph = build_graph(entry, [finding])
        highlighted = [e["id"] for e in graph.edges if e["error_highlight"]]
        assert highlighted == ["sub0-res"]  # status 500 and leak coincide here

    def test_highlight_soundness(self):
        entry, finding = leaky_entry()
        graph = build_graph(entry, [finding])
        for edge in graph.edges:
            if edge["kind"] == "request":
                assert not edge["error_highlight"]
        # edge count conservation
        assert len(graph.edges) == 2 * (1 + len(entry.subs))

    def test_labels_are_host_port(self):
        entry, _ = leaky_entry()
        graph = build_graph(entry, [])
        for node in graph.nodes:
            host, port = node["label"].rsplit(":", 1)
            assert host and port.isdigit()
        for edge in graph.edges:
            host, port = edge["label"].rsplit(":", 1)
            assert host and port.isdigit()

    def test_payload_ref_only_when_captured(self):
        entry, _ = leaky_entry()
        graph = build_graph(entry, [])
        by_id = {e["id"]: e for e in graph.edges}
        assert by_id["main-res"]["payload_ref"] == {
            "trace": "t0000",
            "exchange": "main",
            "part": "response",
        }
        assert "payload_ref" not in by_id["main-req"]  # no request headers/body captured
        assert "payload_ref" in by_id["sub0-req"]
        assert "payload_ref" in by_id["sub0-res"]

    def test_same_backend_twice_one_node(self):
        entry = TraceEntry(
            entry_id="t0000",
            main=make_event(1, BFF),
            subs=[make_event(2, B1), make_event(3, B1)],
        )
        graph = build_graph(entry, [])
        assert len([n for n in graph.nodes if n["kind"] == "backend"]) == 1
        assert len(graph.edges) == 6


class TestRenderReport:
    def test_clean_run_sections(self):
        report = render_error_report(record_with())
        data = report.to_dict()
        assert set(data["sections"].keys()) == {"summary", "error_counts", "findings"}
        for items in data["sections"]["findings"].values():
            assert items == []

    def test_leak_sub_only_lands_in_category_three(self):
        entry, finding = leaky_entry()
        seq = TestSequence(id="s0001", cases=[FuzzCase(operation="getOrder", bindings={"orderId": "o1"})])
        report = render_error_report(record_with([entry], [finding], [seq]))
        data = report.to_dict()["sections"]["findings"]
        assert len(data["leak_sub_only"]) == 1
        assert data["leak_both"] == [] and data["leak_main_only"] == [] and data["server_error_5xx"] == []
        item = data["leak_sub_only"][0]
        assert item["trace"] == "t0000"
        assert item["sequence"]["id"] == "s0001"  # full request sequence attached
        assert [r["role"] for r in item["requests"]] == ["main", "sub"]

    def test_report_classifier_agreement(self):
        entry, finding = leaky_entry()
        server_err = Finding(category=CATEGORY_SERVER_ERROR, trace="t0000", statuses=[200, 500])
        report = render_error_report(record_with([entry], [finding, server_err]))
        data = report.to_dict()["sections"]["findings"]
        leak_items = data["leak_both"] + data["leak_main_only"] + data["leak_sub_only"]
        assert len(leak_items) == 1  # one trace with a leak finding
        assert len(data["server_error_5xx"]) == 1


class TestExport:
    def test_empty_report_is_schema_valid(self):
        payload = json.loads(export_report(render_error_report(record_with()), "json"))
        jsonschema.validate(payload, load_schema())
        assert payload["sections"]["summary"]["total_responses"] == 0

    def test_populated_report_is_schema_valid(self):
        entry, finding = leaky_entry()
        seq = TestSequence(id="s0001", cases=[FuzzCase(operation="getOrder", bindings={})])
        summary = ReportSummary(
            coverage=CoverageStats(6, 3, 0.5),
            total_main_requests=1,
            total_responses=2,
            status_histogram={200: 1, 500: 1},
            errors_from_bff=0,
            errors_per_backend={B1: 1},
        )
        report = render_error_report(record_with([entry], [finding], [seq], summary))
        payload = json.loads(export_report(report, "json"))
        jsonschema.validate(payload, load_schema())

    def test_export_deterministic(self):
        entry, finding = leaky_entry()
        record = record_with([entry], [finding])
        first = export_report(render_error_report(record), "json")
        second = export_report(render_error_report(record), "json")
        assert first == second
        assert export_report(render_error_report(record), "text") == export_report(
            render_error_report(record), "text"
        )

    def test_json_roundtrip_reexports_identical(self):
        entry, finding = leaky_entry()
        record = record_with([entry], [finding])
        exported = export_report(render_error_report(record), "json")
        reparsed = ErrorReport.from_dict(json.loads(exported))
        assert export_report(reparsed, "json") == exported

    def test_text_contains_three_sections(self):
        text = export_report(render_error_report(record_with()), "text").decode()
        assert "Section 1" in text and "Section 2" in text and "Section 3" in text

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            export_report(render_error_report(record_with()), "pdf")
