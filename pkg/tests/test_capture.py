import json
import os
import random

import pytest
import requests
from hypothesis import given, settings, strategies as st

from bffprobe import capture
from bffprobe.capture import (
    BODY_CAPTURE_LIMIT,
    CaptureLog,
    EmptyAfterSkips,
    EmptyInput,
    MixedRuns,
    TrafficEvent,
    UnknownDialect,
    UnreadableFile,
    ingest_log,
    merge_logs,
    start_proxy,
    write_jsonl,
)
from conftest import make_event

DATA = os.path.join(os.path.dirname(__file__), "data")
ZEEK_FIXTURE = os.path.join(DATA, "zeek_http_fixture.log")


class TestTrafficEvent:
    def test_port_range_enforced(self):
        with pytest.raises(ValueError):
            make_event(1, "10.0.0.1:0")
        with pytest.raises(ValueError):
            make_event(1, "10.0.0.1:70000")

    def test_status_range_enforced(self):
        with pytest.raises(ValueError):
            make_event(1, "10.0.0.1:80", status=99)
        with pytest.raises(ValueError):
            make_event(1, "10.0.0.1:80", status=700)
        make_event(1, "10.0.0.1:80", status=0)  # "no response observed"

    def test_capture_limit_enforced(self):
        with pytest.raises(ValueError):
            make_event(1, "10.0.0.1:80", resp_body=b"x" * (BODY_CAPTURE_LIMIT + 1))

    def test_roundtrip_with_bodies_and_headers(self):
        event = make_event(
            7,
            "10.0.0.1:80",
            req_headers={"X-A": "1"},
            resp_headers={"Content-Type": "text/plain"},
            req_body=b"\x00\xffbinary",
            resp_body=b"hello",
            resp_body_truncated=True,
        )
        assert TrafficEvent.from_dict(json.loads(json.dumps(event.to_dict()))) == event

    def test_capture_log_requires_sorted(self):
        events = [make_event(5, "10.0.0.1:80"), make_event(3, "10.0.0.1:80")]
        with pytest.raises(ValueError):
            CaptureLog(run_id="r", events=events)


class TestProxy:
    def test_forwards_and_records_one_event(self, stub_upstream):
        stub_upstream.routes["/hello"] = (200, {"Content-Type": "text/plain"}, b"hi there")
        proxy = start_proxy("127.0.0.1:0", stub_upstream.endpoint, "r1")
        try:
            resp = requests.get(f"http://{proxy.listen}/hello", timeout=5)
            assert resp.status_code == 200
            assert resp.content == b"hi there"
        finally:
            log = proxy.stop()
        assert len(log.events) == 1
        event = log.events[0]
        assert (event.method, event.uri, event.status) == ("GET", "/hello", 200)
        assert event.destination == stub_upstream.endpoint
        assert event.resp_body == b"hi there"
        assert not event.proxy_generated

    def test_stop_with_no_traffic(self, stub_upstream):
        proxy = start_proxy("127.0.0.1:0", stub_upstream.endpoint, "r1")
        assert proxy.stop().events == []

    def test_upstream_down_yields_proxy_generated_502(self):
        dead_port = capture.free_port()
        proxy = start_proxy("127.0.0.1:0", f"127.0.0.1:{dead_port}", "r1")
        try:
            resp = requests.get(f"http://{proxy.listen}/x", timeout=5)
            assert resp.status_code == 502
        finally:
            log = proxy.stop()
        assert len(log.events) == 1
        assert log.events[0].status == 502
        assert log.events[0].proxy_generated

    def test_bind_failed_on_taken_port(self, stub_upstream):
        proxy = start_proxy("127.0.0.1:0", stub_upstream.endpoint, "r1")
        try:
            with pytest.raises(capture.BindFailed):
                start_proxy(proxy.listen, stub_upstream.endpoint, "r1")
        finally:
            proxy.stop()

    def test_transparency_differential(self, stub_upstream):
        rng = random.Random(7)
        statuses = [200, 201, 400, 404, 500, 502, 503]
        cases = []
        for i in range(25):
            body = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 2048)))
            status = rng.choice(statuses)
            stub_upstream.routes[f"/case/{i}"] = (status, {"Content-Type": "application/octet-stream"}, body)
            cases.append((f"/case/{i}", status, body))
        proxy = start_proxy("127.0.0.1:0", stub_upstream.endpoint, "r1")
        try:
            for path, status, body in cases:
                direct = requests.get(f"http://{stub_upstream.endpoint}{path}", timeout=5)
                proxied = requests.get(f"http://{proxy.listen}{path}", timeout=5)
                assert proxied.status_code == direct.status_code == status
                assert proxied.content == direct.content == body
        finally:
            proxy.stop()

    def test_request_body_forwarded_and_captured(self, stub_upstream):
        proxy = start_proxy("127.0.0.1:0", stub_upstream.endpoint, "r1")
        payload = b'{"a": 1}'
        try:
            requests.post(f"http://{proxy.listen}/submit", data=payload, timeout=5)
        finally:
            log = proxy.stop()
        method, path, body, _ = stub_upstream.requests[-1]
        assert (method, path, body) == ("POST", "/submit", payload)
        assert log.events[0].req_body == payload

    def test_large_body_truncated_in_capture_but_not_forwarding(self, stub_upstream):
        big = b"B" * (BODY_CAPTURE_LIMIT + 500)
        stub_upstream.routes["/big"] = (200, {"Content-Type": "text/plain"}, big)
        proxy = start_proxy("127.0.0.1:0", stub_upstream.endpoint, "r1")
        try:
            resp = requests.get(f"http://{proxy.listen}/big", timeout=5)
            assert resp.content == big  # forwarding untouched
        finally:
            log = proxy.stop()
        event = log.events[0]
        assert len(event.resp_body) == BODY_CAPTURE_LIMIT
        assert event.resp_body_truncated

    def test_proxy_writes_native_jsonl(self, stub_upstream, tmp_path):
        log_path = str(tmp_path / "traffic.jsonl")
        proxy = start_proxy("127.0.0.1:0", stub_upstream.endpoint, "r1", log_path=log_path)
        try:
            requests.get(f"http://{proxy.listen}/a", timeout=5)
            requests.get(f"http://{proxy.listen}/b", timeout=5)
        finally:
            live = proxy.stop()
        loaded = ingest_log(log_path, "native-jsonl", run_id="r1")
        assert loaded.events == live.events


ZEEK_EXPECTED = [
    # (ts µs, origin, destination, method, uri, status)
    (1700000000100000, "10.0.0.9:55001", "10.0.0.6:8081", "GET", "/health", 200),
    (1700000000200000, "10.0.0.2:44001", "10.0.0.5:8000", "GET", "/products", 200),
    (1700000000210000, "10.0.0.5:53001", "10.0.0.6:8081", "GET", "/items", 200),
    (1700000000220000, "10.0.0.5:53002", "10.0.0.7:8082", "GET", "/stats/top", 200),
    (1700000000500000, "10.0.0.2:44002", "10.0.0.5:8000", "GET", "/orders/o1", 500),
    (1700000000510000, "10.0.0.5:53003", "10.0.0.7:8082", "GET", "/records/o1", 500),
    (1700000000900000, "10.0.0.2:44003", "10.0.0.5:8000", "POST", "/orders", 201),
    (1700000000910000, "10.0.0.5:53004", "10.0.0.8:8083", "GET", "/accounts/u1", 200),
    (1700000000920000, "10.0.0.5:53005", "10.0.0.7:8082", "POST", "/records", 201),
    (1700000001000000, "10.0.0.2:44004", "10.0.0.5:8000", "GET", "/users/u9", 404),
]


class TestIngest:
    def test_zeek_fixture_hand_expected(self):
        log = ingest_log(ZEEK_FIXTURE, "zeek-http", run_id="fix")
        assert log.skipped_records == 0
        got = [(e.ts, e.origin, e.destination, e.method, e.uri, e.status) for e in log.events]
        assert got == ZEEK_EXPECTED
        # zeek http.log carries no bodies: leak detection must not see any
        assert all(e.req_body is None and e.resp_body is None for e in log.events)

    def test_header_only_zeek_file(self, tmp_path):
        path = tmp_path / "empty.log"
        path.write_text("#fields\tts\tid.orig_h\n")
        with pytest.raises(EmptyAfterSkips):
            ingest_log(str(path), "zeek-http")

    def test_zeek_skips_bad_records_and_counts(self, tmp_path):
        lines = [
            "#fields\tts\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tmethod\thost\turi\tstatus_code",
            "1.5\t10.0.0.1\t1000\t10.0.0.2\t80\tGET\th\t/\t200",
            "not-a-ts\t10.0.0.1\t1000\t10.0.0.2\t80\tGET\th\t/\t200",  # bad ts
            "2.5\t-\t1000\t10.0.0.2\t80\tGET\th\t/\t200",  # unset required field
            "3.5\t10.0.0.1\t1000\t10.0.0.2\t80\tGET\th\t/\t-",  # no response: kept, status 0
        ]
        path = tmp_path / "mixed.log"
        path.write_text("\n".join(lines) + "\n")
        log = ingest_log(str(path), "zeek-http")
        assert len(log.events) == 2
        assert log.skipped_records == 2
        assert len(log.events) + log.skipped_records == 4  # conservation
        assert log.events[1].status == 0

    def test_zeek_fractional_ts_is_exact_microseconds(self, tmp_path):
        path = tmp_path / "frac.log"
        path.write_text(
            "#fields\tts\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tmethod\thost\turi\tstatus_code\n"
            "1690000000.123456\t10.0.0.1\t1\t10.0.0.2\t80\tGET\th\t/\t200\n"
        )
        log = ingest_log(str(path), "zeek-http")
        assert log.events[0].ts == 1690000000123456

    def test_jsonl_out_of_order_records_sorted(self, tmp_path):
        e1 = make_event(100, "10.0.0.1:80", uri="/b")
        e2 = make_event(50, "10.0.0.1:80", uri="/a")
        path = tmp_path / "log.jsonl"
        path.write_text(json.dumps(e1.to_dict()) + "\n" + json.dumps(e2.to_dict()) + "\n")
        log = ingest_log(str(path), "native-jsonl")
        assert [e.ts for e in log.events] == [50, 100]

    def test_jsonl_conservation(self, tmp_path):
        path = tmp_path / "log.jsonl"
        good = make_event(1, "10.0.0.1:80")
        path.write_text(json.dumps(good.to_dict()) + "\n" + "garbage\n" + '{"ts": 1}\n')
        log = ingest_log(str(path), "native-jsonl")
        assert len(log.events) == 1
        assert log.skipped_records == 2

    def test_unknown_dialect(self):
        with pytest.raises(UnknownDialect):
            ingest_log(ZEEK_FIXTURE, "pcap")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(UnreadableFile):
            ingest_log(str(tmp_path / "missing.log"), "zeek-http")

    def test_write_then_ingest_roundtrip(self, tmp_path):
        events = [make_event(i, "10.0.0.1:80", uri=f"/{i}") for i in range(5)]
        log = CaptureLog(run_id="w", events=events)
        path = str(tmp_path / "out.jsonl")
        write_jsonl(log, path)
        assert ingest_log(path, "native-jsonl", run_id="w").events == events


class TestMerge:
    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            merge_logs([])

    def test_single_log_identity(self):
        log = CaptureLog(run_id="r", events=[make_event(1, "10.0.0.1:80")])
        merged = merge_logs([log])
        assert merged.events == log.events
        assert merged.run_id == "r"

    def test_mixed_runs_rejected(self):
        a = CaptureLog(run_id="a")
        b = CaptureLog(run_id="b")
        with pytest.raises(MixedRuns):
            merge_logs([a, b])

    def test_merge_counts_and_order(self):
        a = CaptureLog(run_id="r", events=[make_event(1, "10.0.0.1:80"), make_event(5, "10.0.0.1:80")])
        b = CaptureLog(run_id="r", events=[make_event(3, "10.0.0.2:80")])
        merged = merge_logs([a, b])
        assert len(merged.events) == 3
        assert [e.ts for e in merged.events] == [1, 3, 5]

    def test_ties_keep_input_list_order(self):
        a = CaptureLog(run_id="r", events=[make_event(7, "10.0.0.1:80", uri="/first")])
        b = CaptureLog(run_id="r", events=[make_event(7, "10.0.0.2:80", uri="/second")])
        merged = merge_logs([a, b])
        assert [e.uri for e in merged.events] == ["/first", "/second"]

    @settings(max_examples=50, deadline=None)
    @given(
        ts_lists=st.lists(st.lists(st.integers(min_value=0, max_value=1000), max_size=6), min_size=1, max_size=4)
    )
    def test_merge_is_sorted_and_conserves(self, ts_lists):
        logs = []
        for ts_list in ts_lists:
            events = [make_event(ts, "10.0.0.1:80") for ts in sorted(ts_list)]
            logs.append(CaptureLog(run_id="p", events=events))
        merged = merge_logs(logs)
        assert len(merged.events) == sum(len(l.events) for l in logs)
        assert all(a.ts <= b.ts for a, b in zip(merged.events, merged.events[1:]))
