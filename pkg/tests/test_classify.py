import json

import pytest
from hypothesis import given, settings, strategies as st

from bffprobe import classify
from bffprobe.classify import (
    ANNOTATION_BODY_UNAVAILABLE,
    BUILTIN_PATTERNS,
    CATEGORY_LEAK_BOTH,
    CATEGORY_LEAK_MAIN_ONLY,
    CATEGORY_LEAK_SUB_ONLY,
    CATEGORY_SERVER_ERROR,
    LeakPattern,
    classify_run,
    classify_trace,
    detect_leak,
    load_patterns,
    pattern_set,
    summarize,
)
from bffprobe.correlate import TraceEntry, TraceMap
from bffprobe.harness import STACK_TRACES
from conftest import make_event

BFF = "10.0.0.5:8000"
B1 = "10.0.0.6:8081"
B2 = "10.0.0.7:8082"

JAVA_BODY = b"java.lang.NullPointerException\n\tat com.x.Svc"


def entry(main_status=200, main_body=None, subs=()):
    main = make_event(1, BFF, status=main_status, resp_body=main_body)
    sub_events = [
        make_event(2 + i, dest, status=status, resp_body=body)
        for i, (dest, status, body) in enumerate(subs)
    ]
    return TraceEntry(entry_id="t0000", main=main, subs=sub_events)


class TestDetectLeak:
    def test_java_stacktrace_literal(self):
        evidence = detect_leak(JAVA_BODY, list(BUILTIN_PATTERNS))
        assert evidence is not None
        assert evidence.pattern_id == "java-stacktrace"
        assert evidence.matched_excerpt in JAVA_BODY.decode()

    def test_clean_json_body(self):
        assert detect_leak(b'{"items":[]}', list(BUILTIN_PATTERNS)) is None

    def test_empty_body(self):
        assert detect_leak(b"", list(BUILTIN_PATTERNS)) is None
        assert detect_leak(None, list(BUILTIN_PATTERNS)) is None

    @pytest.mark.parametrize(
        "runtime,expected_id",
        [("java", "java-stacktrace"), ("python", "python-traceback"), ("node", "node-stack")],
    )
    def test_harness_stack_traces_hit_their_own_pattern(self, runtime, expected_id):
        evidence = detect_leak(STACK_TRACES[runtime].encode(), list(BUILTIN_PATTERNS))
        assert evidence is not None and evidence.pattern_id == expected_id

    def test_json_escaped_java_trace_still_detected(self):
        body = json.dumps({"error": STACK_TRACES["java"]}).encode()
        evidence = detect_leak(body, list(BUILTIN_PATTERNS))
        assert evidence is not None and evidence.pattern_id == "java-stacktrace"

    def test_go_panic_and_dotnet_and_generic(self):
        go = b"panic: runtime error: nil deref\n\ngoroutine 17 [running]:\nmain.run()\n"
        assert detect_leak(go, list(BUILTIN_PATTERNS)).pattern_id == "go-panic"
        dotnet = (
            b"System.NullReferenceException: Object reference not set.\n"
            b"   at Shop.Orders.OrderService.Load(Int32 id)\n"
        )
        assert detect_leak(dotnet, list(BUILTIN_PATTERNS)).pattern_id == "dotnet"
        assert detect_leak(b"ORA-00942: table or view does not exist", list(BUILTIN_PATTERNS)).pattern_id == "generic"
        assert detect_leak(b"SQLSTATE[42S02]", list(BUILTIN_PATTERNS)).pattern_id == "generic"

    def test_first_matching_pattern_wins(self):
        patterns = [LeakPattern("first", "needle"), LeakPattern("second", "needle")]
        assert detect_leak(b"a needle here", patterns).pattern_id == "first"

    def test_excerpt_bounded_to_200_chars(self):
        body = (b"x" * 5000) + b"Traceback (most recent call last)" + (b"y" * 5000)
        evidence = detect_leak(body, list(BUILTIN_PATTERNS))
        assert len(evidence.matched_excerpt) <= 200
        assert evidence.matched_excerpt in body.decode()

    def test_user_patterns_loaded_after_builtins(self, tmp_path):
        path = tmp_path / "patterns.jsonl"
        path.write_text(json.dumps({"id": "custom", "regex": "MAGIC-\\d+", "description": "d"}) + "\n")
        patterns = pattern_set(str(path))
        assert patterns[: len(BUILTIN_PATTERNS)] == list(BUILTIN_PATTERNS)
        assert detect_leak(b"MAGIC-42", patterns).pattern_id == "custom"

    def test_bad_user_pattern_rejected(self, tmp_path):
        path = tmp_path / "patterns.jsonl"
        path.write_text(json.dumps({"id": "broken", "regex": "("}) + "\n")
        with pytest.raises(Exception):
            load_patterns(str(path))


class TestClassifyTrace:
    def test_leak_both(self):
        e = entry(main_body=JAVA_BODY, subs=[(B1, 200, JAVA_BODY)])
        findings = classify_trace(e, list(BUILTIN_PATTERNS))
        assert [f.category for f in findings] == [CATEGORY_LEAK_BOTH]
        locations = {ev.location for ev in findings[0].evidence}
        assert locations == {"main-response", "sub-response(0)"}

    def test_server_error_only(self):
        e = entry(main_body=b"{}", subs=[(B1, 503, b'{"error": "unavailable"}')])
        findings = classify_trace(e, list(BUILTIN_PATTERNS))
        assert [f.category for f in findings] == [CATEGORY_SERVER_ERROR]

    def test_sub_leak_with_sanitized_500_main(self):
        e = entry(
            main_status=500,
            main_body=b'{"error": "upstream failure"}',
            subs=[(B1, 500, STACK_TRACES["java"].encode())],
        )
        findings = classify_trace(e, list(BUILTIN_PATTERNS))
        assert [f.category for f in findings] == [CATEGORY_LEAK_SUB_ONLY, CATEGORY_SERVER_ERROR]

    def test_main_only(self):
        e = entry(main_status=500, main_body=STACK_TRACES["python"].encode(), subs=[])
        findings = classify_trace(e, list(BUILTIN_PATTERNS))
        assert [f.category for f in findings] == [CATEGORY_LEAK_MAIN_ONLY, CATEGORY_SERVER_ERROR]

    def test_clean_trace_yields_nothing(self):
        e = entry(main_body=b"{}", subs=[(B1, 200, b"[]")])
        assert classify_trace(e, list(BUILTIN_PATTERNS)) == []

    leak_options = st.tuples(st.booleans(), st.booleans(), st.sampled_from([200, 404, 500, 503]))

    @settings(max_examples=60, deadline=None)
    @given(main_leak=st.booleans(), sub_leaks=st.lists(st.booleans(), max_size=3), status=st.sampled_from([200, 500]))
    def test_leak_categories_mutually_exclusive(self, main_leak, sub_leaks, status):
        main_body = JAVA_BODY if main_leak else b"{}"
        subs = [(B1, status, JAVA_BODY if leak else b"{}") for leak in sub_leaks]
        findings = classify_trace(entry(main_body=main_body, subs=subs), list(BUILTIN_PATTERNS))
        leak_cats = [
            f.category
            for f in findings
            if f.category in (CATEGORY_LEAK_BOTH, CATEGORY_LEAK_MAIN_ONLY, CATEGORY_LEAK_SUB_ONLY)
        ]
        assert len(leak_cats) <= 1
        if main_leak and any(sub_leaks):
            assert leak_cats == [CATEGORY_LEAK_BOTH]
        elif main_leak:
            assert leak_cats == [CATEGORY_LEAK_MAIN_ONLY]
        elif any(sub_leaks):
            assert leak_cats == [CATEGORY_LEAK_SUB_ONLY]

    @settings(max_examples=40, deadline=None)
    @given(
        bodies=st.lists(st.sampled_from([b"{}", JAVA_BODY, b"Traceback (most recent call last):", b""]), min_size=1, max_size=4),
        extra_regex=st.sampled_from(["Traceback", "zzz-never", "\\{\\}"]),
    )
    def test_adding_pattern_never_removes_detections(self, bodies, extra_regex):
        # Leak categories are exclusive, so a new pattern may *upgrade* a
        # category (sub-only -> both); what never shrinks is the set of
        # leaking locations, and 5xx findings are untouched.
        def locations(findings):
            return {ev.location for f in findings for ev in f.evidence}

        def has_leak(findings):
            return any(f.category != CATEGORY_SERVER_ERROR for f in findings)

        main_body, *sub_bodies = bodies
        subs = [(B1, 200, b) for b in sub_bodies]
        e = entry(main_body=main_body, subs=subs)
        base = classify_trace(e, list(BUILTIN_PATTERNS))
        extended = classify_trace(e, list(BUILTIN_PATTERNS) + [LeakPattern("extra", extra_regex)])
        assert locations(base) <= locations(extended)
        assert not has_leak(base) or has_leak(extended)
        assert (CATEGORY_SERVER_ERROR in {f.category for f in base}) == (
            CATEGORY_SERVER_ERROR in {f.category for f in extended}
        )


class TestClassifyRun:
    def test_body_unavailable_annotation(self):
        # zeek-style events carry no bodies at all
        e = entry(main_status=500, main_body=None, subs=[(B1, 500, None)])
        tm = TraceMap(bff=BFF, entries=[e])
        findings = classify_run(tm, list(BUILTIN_PATTERNS))
        assert ANNOTATION_BODY_UNAVAILABLE in e.annotations
        # 5xx still classified from statuses alone
        assert [f.category for f in findings] == [CATEGORY_SERVER_ERROR]

    def test_mixed_traces(self):
        clean = TraceEntry(entry_id="t0000", main=make_event(1, BFF, resp_body=b"{}"))
        leaky = TraceEntry(
            entry_id="t0001",
            main=make_event(2, BFF, resp_body=b"{}"),
            subs=[make_event(3, B1, status=200, resp_body=JAVA_BODY)],
        )
        tm = TraceMap(bff=BFF, entries=[clean, leaky])
        findings = classify_run(tm, list(BUILTIN_PATTERNS))
        assert [(f.category, f.trace) for f in findings] == [(CATEGORY_LEAK_SUB_ONLY, "t0001")]


class TestSummarize:
    def test_empty_trace_map(self, fixture_model):
        summary = summarize(TraceMap(bff=BFF), fixture_model, set())
        assert summary.total_main_requests == 0
        assert summary.total_responses == 0
        assert summary.status_histogram == {}
        assert summary.coverage.coverage == 0.0

    def test_single_entry_counts(self, fixture_model):
        e = entry(main_status=200, subs=[(B1, 200, None), (B2, 500, None)])
        summary = summarize(TraceMap(bff=BFF, entries=[e]), fixture_model, {"listProducts"})
        assert summary.total_responses == 3
        assert summary.status_histogram == {200: 2, 500: 1}
        assert summary.errors_per_backend == {B2: 1}
        assert summary.errors_from_bff == 0
        assert summary.total_responses == sum(summary.status_histogram.values())

    def test_bff_errors_counted_from_main(self):
        e = entry(main_status=404, subs=[(B1, 400, None)])
        summary = summarize(TraceMap(bff=BFF, entries=[e]), None, set())
        assert summary.errors_from_bff == 1
        assert summary.errors_per_backend == {B1: 1}

    def test_status_zero_not_a_response(self):
        e = entry(main_status=200, subs=[(B1, 0, None)])
        summary = summarize(TraceMap(bff=BFF, entries=[e]), None, set())
        assert summary.total_responses == 1
        assert 0 not in summary.status_histogram

    def test_error_range_is_400_to_599(self):
        statuses = [(B1, s, None) for s in (200, 301, 399, 400, 499, 500, 599)]
        e = entry(main_status=200, subs=statuses)
        summary = summarize(TraceMap(bff=BFF, entries=[e]), None, set())
        assert summary.errors_per_backend == {B1: 4}  # 400, 499, 500, 599
