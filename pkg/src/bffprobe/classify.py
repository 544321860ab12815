"""Exception-leak detection and per-trace finding classification.

Responses are scanned against an ordered pattern set covering mainstream
runtime stack-trace shapes; users can append their own patterns from a JSONL
file.  Each traced sequence gets at most one leak category (both / main only /
sub only) plus, independently, a server-error finding when any status in the
trace is 5xx.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .api_model import ApiModel, CoverageStats, coverage
from .correlate import TraceEntry, TraceMap

CATEGORY_LEAK_BOTH = "LeakBoth"
CATEGORY_LEAK_MAIN_ONLY = "LeakMainOnly"
CATEGORY_LEAK_SUB_ONLY = "LeakSubOnly"
CATEGORY_SERVER_ERROR = "ServerError5xx"

CATEGORIES = (
    CATEGORY_LEAK_BOTH,
    CATEGORY_LEAK_MAIN_ONLY,
    CATEGORY_LEAK_SUB_ONLY,
    CATEGORY_SERVER_ERROR,
)

ANNOTATION_BODY_UNAVAILABLE = "body-unavailable"

# Context kept around a pattern match, and the hard cap on the excerpt.
EXCERPT_CONTEXT = 100
EXCERPT_LIMIT = 200


@dataclass(frozen=True)
class LeakPattern:
    id: str
    regex: str
    description: str = ""

    def compiled(self) -> re.Pattern:
        return re.compile(self.regex)


BUILTIN_PATTERNS = (
    LeakPattern(
        "java-stacktrace",
        r"(?:[a-zA-Z_$][\w$]*\.){2,}[A-Z]\w*(?:Exception|Error)\b|\bat\s+(?:[a-z][\w$]*\.)+[\w$<>]+\([^)\n]*\)",
        "JVM exception class names and stack frames",
    ),
    LeakPattern(
        "python-traceback",
        r"Traceback \(most recent call last\)",
        "CPython traceback banner",
    ),
    LeakPattern(
        "node-stack",
        r"[A-Z][a-zA-Z]*Error:[^\n]*\n(?:\s+at\s+[^\n]*:\d+:\d+\)?\n?)+",
        "Node.js Error with at-frames carrying line:column",
    ),
    LeakPattern(
        "go-panic",
        r"(?s)panic:.{0,500}?goroutine \d+",
        "Go panic followed by a goroutine dump",
    ),
    LeakPattern(
        "dotnet",
        r"(?s)[\w.]*Exception(?::| ).{0,300}?\bat [A-Z][\w.<>]+\([^)\n]*\)",
        ".NET exception with PascalCase namespace frames",
    ),
    LeakPattern(
        "generic",
        r"(?i:stack trace)|SQLSTATE|ORA-\d{5}",
        "generic database / stack-trace markers",
    ),
)


def load_patterns(path: str) -> list[LeakPattern]:
    """Read user patterns: one JSON object per line {id, regex, description}."""
    patterns = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            pattern = LeakPattern(obj["id"], obj["regex"], obj.get("description", ""))
            pattern.compiled()  # validate eagerly
            patterns.append(pattern)
    return patterns


def pattern_set(patterns_path: str | None = None) -> list[LeakPattern]:
    """Built-in patterns, with any user file appended after them."""
    patterns = list(BUILTIN_PATTERNS)
    if patterns_path:
        patterns.extend(load_patterns(patterns_path))
    return patterns


@dataclass
class LeakEvidence:
    pattern_id: str
    matched_excerpt: str
    location: str  # "main-response" | "sub-response(<index>)"

    def to_dict(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "matched_excerpt": self.matched_excerpt,
            "location": self.location,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LeakEvidence":
        return cls(d["pattern_id"], d["matched_excerpt"], d["location"])


@dataclass
class Finding:
    category: str
    trace: str  # entry_id of the TraceEntry this finding belongs to
    evidence: list[LeakEvidence] = field(default_factory=list)
    statuses: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "trace": self.trace,
            "evidence": [e.to_dict() for e in self.evidence],
            "statuses": list(self.statuses),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Finding":
        return cls(
            category=d["category"],
            trace=d["trace"],
            evidence=[LeakEvidence.from_dict(e) for e in d.get("evidence", [])],
            statuses=list(d.get("statuses", [])),
        )


@dataclass
class ReportSummary:
    coverage: CoverageStats
    total_main_requests: int
    total_responses: int
    status_histogram: dict[int, int]
    errors_from_bff: int
    errors_per_backend: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage.to_dict(),
            "total_main_requests": self.total_main_requests,
            "total_responses": self.total_responses,
            "status_histogram": {str(k): v for k, v in sorted(self.status_histogram.items())},
            "errors_from_bff": self.errors_from_bff,
            "errors_per_backend": dict(sorted(self.errors_per_backend.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportSummary":
        return cls(
            coverage=CoverageStats.from_dict(d["coverage"]),
            total_main_requests=d["total_main_requests"],
            total_responses=d["total_responses"],
            status_histogram={int(k): v for k, v in d.get("status_histogram", {}).items()},
            errors_from_bff=d["errors_from_bff"],
            errors_per_backend=dict(d.get("errors_per_backend", {})),
        )


def detect_leak(body: bytes | None, patterns: list[LeakPattern]) -> LeakEvidence | None:
    """First matching pattern wins; evidence carries a bounded excerpt."""
    if not body:
        return None
    text = body.decode("utf-8", errors="replace")
    for pattern in patterns:
        match = pattern.compiled().search(text)
        if match:
            start = max(0, match.start() - EXCERPT_CONTEXT)
            end = min(len(text), match.end() + EXCERPT_CONTEXT)
            excerpt = text[start:end][:EXCERPT_LIMIT]
            return LeakEvidence(pattern.id, excerpt, "main-response")
    return None


def is_error_status(status: int) -> bool:
    """Client (400-499) or server (500-599) error responses."""
    return 400 <= status <= 599


def is_server_error(status: int) -> bool:
    return 500 <= status <= 599


def classify_trace(entry: TraceEntry, patterns: list[LeakPattern]) -> list[Finding]:
    """Findings for one trace: one leak category at most, plus 5xx if present."""
    findings = []
    evidence: list[LeakEvidence] = []
    main_hit = detect_leak(entry.main.resp_body, patterns)
    if main_hit:
        evidence.append(main_hit)
    sub_hit = False
    for idx, sub in enumerate(entry.subs):
        hit = detect_leak(sub.resp_body, patterns)
        if hit:
            hit.location = f"sub-response({idx})"
            evidence.append(hit)
            sub_hit = True

    statuses = entry.statuses
    if main_hit and sub_hit:
        findings.append(Finding(CATEGORY_LEAK_BOTH, entry.entry_id, evidence, statuses))
    elif main_hit:
        findings.append(Finding(CATEGORY_LEAK_MAIN_ONLY, entry.entry_id, evidence, statuses))
    elif sub_hit:
        findings.append(Finding(CATEGORY_LEAK_SUB_ONLY, entry.entry_id, evidence, statuses))
    if any(is_server_error(s) for s in statuses):
        findings.append(Finding(CATEGORY_SERVER_ERROR, entry.entry_id, [], statuses))
    return findings


def classify_run(trace_map: TraceMap, patterns: list[LeakPattern]) -> list[Finding]:
    """Classify every trace; traces with no captured bodies are annotated
    body-unavailable instead of being treated as clean."""
    findings = []
    for entry in trace_map.entries:
        bodies = [entry.main.resp_body] + [s.resp_body for s in entry.subs]
        if all(b is None for b in bodies):
            if ANNOTATION_BODY_UNAVAILABLE not in entry.annotations:
                entry.annotations.append(ANNOTATION_BODY_UNAVAILABLE)
            statuses = entry.statuses
            if any(is_server_error(s) for s in statuses):
                findings.append(Finding(CATEGORY_SERVER_ERROR, entry.entry_id, [], statuses))
            continue
        findings.extend(classify_trace(entry, patterns))
    return findings


def summarize(trace_map: TraceMap, model: ApiModel | None, executed: set[str]) -> ReportSummary:
    """Run statistics over every main and sub response in the trace map."""
    histogram: dict[int, int] = {}
    errors_from_bff = 0
    errors_per_backend: dict[str, int] = {}
    total_responses = 0
    for entry in trace_map.entries:
        if entry.main.status >= 100:
            total_responses += 1
            histogram[entry.main.status] = histogram.get(entry.main.status, 0) + 1
            if is_error_status(entry.main.status):
                errors_from_bff += 1
        for sub in entry.subs:
            if sub.status >= 100:
                total_responses += 1
                histogram[sub.status] = histogram.get(sub.status, 0) + 1
                if is_error_status(sub.status):
                    backend = sub.destination
                    errors_per_backend[backend] = errors_per_backend.get(backend, 0) + 1
    stats = coverage(model, executed) if model is not None else CoverageStats(0, 0, 0.0)
    return ReportSummary(
        coverage=stats,
        total_main_requests=len(trace_map.entries),
        total_responses=total_responses,
        status_histogram=histogram,
        errors_from_bff=errors_from_bff,
        errors_per_backend=errors_per_backend,
    )
