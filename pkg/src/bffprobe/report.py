"""Error report assembly and per-trace request graphs.

The error report has three sections: the overall test summary, the error
counts split between the BFF and each backend, and the flagged request
sequences grouped into the four finding categories.  Each finding-bearing
trace can additionally be rendered as a graph: client, BFF, and backend
nodes, one request/response edge pair per exchange, error edges highlighted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .classify import (
    CATEGORIES,
    CATEGORY_LEAK_BOTH,
    CATEGORY_LEAK_MAIN_ONLY,
    CATEGORY_LEAK_SUB_ONLY,
    CATEGORY_SERVER_ERROR,
    Finding,
    ReportSummary,
    is_server_error,
)
from .correlate import TraceEntry

CATEGORY_KEYS = {
    CATEGORY_LEAK_BOTH: "leak_both",
    CATEGORY_LEAK_MAIN_ONLY: "leak_main_only",
    CATEGORY_LEAK_SUB_ONLY: "leak_sub_only",
    CATEGORY_SERVER_ERROR: "server_error_5xx",
}

CATEGORY_TITLES = {
    CATEGORY_LEAK_BOTH: "Exception leakage in main and sub responses",
    CATEGORY_LEAK_MAIN_ONLY: "Exception leakage in the main response only",
    CATEGORY_LEAK_SUB_ONLY: "Exception leakage in sub responses only",
    CATEGORY_SERVER_ERROR: "HTTP 5xx return status",
}


@dataclass
class ErrorReport:
    run_id: str
    summary: ReportSummary
    error_counts: dict
    findings: dict[str, list[dict]]  # category name -> finding items

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "sections": {
                "summary": self.summary.to_dict(),
                "error_counts": self.error_counts,
                "findings": {CATEGORY_KEYS[c]: self.findings.get(c, []) for c in CATEGORIES},
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorReport":
        sections = d["sections"]
        by_key = {v: k for k, v in CATEGORY_KEYS.items()}
        return cls(
            run_id=d["run_id"],
            summary=ReportSummary.from_dict(sections["summary"]),
            error_counts=sections["error_counts"],
            findings={by_key[k]: v for k, v in sections["findings"].items()},
        )


@dataclass
class GraphModel:
    trace: str
    nodes: list[dict] = field(default_factory=list)
    edges: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"trace": self.trace, "nodes": self.nodes, "edges": self.edges}


def render_error_report(record) -> ErrorReport:
    """Assemble the three-section report from a classified RunRecord."""
    sequences = {seq.id: seq for seq in record.sequences}
    entries = {e.entry_id: e for e in record.trace_map.entries} if record.trace_map else {}
    findings: dict[str, list[dict]] = {c: [] for c in CATEGORIES}
    for finding in record.findings:
        entry = entries.get(finding.trace)
        item = {
            "trace": finding.trace,
            "statuses": list(finding.statuses),
            "evidence": [e.to_dict() for e in finding.evidence],
            "requests": _trace_requests(entry) if entry else [],
            "sequence": None,
        }
        if entry and entry.sequence_ref:
            seq_id = entry.sequence_ref.split("/")[0]
            if seq_id in sequences:
                item["sequence"] = sequences[seq_id].to_dict()
        findings[finding.category].append(item)
    return ErrorReport(
        run_id=record.run_id,
        summary=record.summary,
        error_counts={
            "errors_from_bff": record.summary.errors_from_bff,
            "errors_per_backend": dict(sorted(record.summary.errors_per_backend.items())),
        },
        findings=findings,
    )


def _trace_requests(entry: TraceEntry) -> list[dict]:
    out = [
        {
            "role": "main",
            "method": entry.main.method,
            "uri": entry.main.uri,
            "destination": entry.main.destination,
            "status": entry.main.status,
        }
    ]
    for sub in entry.subs:
        out.append(
            {
                "role": "sub",
                "method": sub.method,
                "uri": sub.uri,
                "destination": sub.destination,
                "status": sub.status,
            }
        )
    return out


def build_graph(entry: TraceEntry, findings: list[Finding]) -> GraphModel:
    """Graph for one trace: the main exchange on the left (client-BFF), one
    request/response edge pair per sub-exchange on the right.

    Leak evidence and status codes belong to the response half of an
    exchange, so error highlighting lands on response edges; request edges
    are never highlighted.
    """
    leak_locations = {
        evidence.location
        for finding in findings
        if finding.trace == entry.entry_id
        for evidence in finding.evidence
    }
    graph = GraphModel(trace=entry.entry_id)
    graph.nodes.append({"id": "client", "kind": "client", "label": entry.main.origin})
    graph.nodes.append({"id": "bff", "kind": "bff", "label": entry.main.destination})
    seen_backends: dict[str, str] = {}
    for sub in entry.subs:
        if sub.destination not in seen_backends:
            node_id = f"backend{len(seen_backends)}"
            seen_backends[sub.destination] = node_id
            graph.nodes.append({"id": node_id, "kind": "backend", "label": sub.destination})

    def edge_pair(prefix, event, from_id, to_id, highlight):
        request = {
            "id": f"{prefix}-req",
            "from": from_id,
            "to": to_id,
            "kind": "request",
            "label": event.destination,
            "error_highlight": False,
        }
        if event.req_headers is not None or event.req_body is not None:
            request["payload_ref"] = {"trace": entry.entry_id, "exchange": prefix, "part": "request"}
        response = {
            "id": f"{prefix}-res",
            "from": to_id,
            "to": from_id,
            "kind": "response",
            "label": event.destination,
            "error_highlight": highlight,
        }
        if event.resp_headers is not None or event.resp_body is not None:
            response["payload_ref"] = {"trace": entry.entry_id, "exchange": prefix, "part": "response"}
        return request, response

    main_highlight = "main-response" in leak_locations or is_server_error(entry.main.status)
    graph.edges.extend(edge_pair("main", entry.main, "client", "bff", main_highlight))
    for idx, sub in enumerate(entry.subs):
        highlight = f"sub-response({idx})" in leak_locations or is_server_error(sub.status)
        graph.edges.extend(edge_pair(f"sub{idx}", sub, "bff", seen_backends[sub.destination], highlight))
    return graph


def export_report(report: ErrorReport, fmt: str) -> bytes:
    """Serialize a report.  JSON output is schema-stable and deterministic;
    text output is a fixed-layout console rendering."""
    if fmt == "json":
        return (json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n").encode()
    if fmt == "text":
        return _render_text(report).encode()
    raise ValueError(f"unknown report format {fmt!r}")


def _render_text(report: ErrorReport) -> str:
    s = report.summary
    lines = [
        f"Run {report.run_id}",
        "",
        "== Section 1: Test summary ==",
        f"API coverage:    {s.coverage.executed_operations}/{s.coverage.total_operations}"
        f" operations ({s.coverage.coverage:.1%})",
        f"Main requests:   {s.total_main_requests}",
        f"Total responses: {s.total_responses}",
        "Status histogram:",
    ]
    for status, count in sorted(s.status_histogram.items()):
        lines.append(f"  {status:>4}  {count}")
    lines += [
        "",
        "== Section 2: Error responses ==",
        f"From BFF:        {report.error_counts['errors_from_bff']}",
        "Per backend:",
    ]
    per_backend = report.error_counts["errors_per_backend"]
    if per_backend:
        for backend, count in sorted(per_backend.items()):
            lines.append(f"  {backend:<22} {count}")
    else:
        lines.append("  (none)")
    lines += ["", "== Section 3: Flagged request sequences =="]
    for number, category in enumerate(CATEGORIES, start=1):
        items = report.findings.get(category, [])
        lines.append(f"[{number}] {CATEGORY_TITLES[category]} ({category}): {len(items)}")
        for item in items:
            seq_id = (item.get("sequence") or {}).get("id", "-")
            statuses = ",".join(str(x) for x in item["statuses"])
            lines.append(f"  - trace {item['trace']}  sequence {seq_id}  statuses [{statuses}]")
            for ev in item["evidence"]:
                excerpt = ev["matched_excerpt"].replace("\n", "\\n")
                if len(excerpt) > 80:
                    excerpt = excerpt[:77] + "..."
                lines.append(f"      {ev['pattern_id']} @ {ev['location']}: {excerpt}")
    lines.append("")
    return "\n".join(lines)
