import pytest
from hypothesis import given, settings, strategies as st

from bffprobe.capture import CaptureLog
from bffprobe.correlate import (
    WARN_NO_BFF_TRAFFIC,
    WARN_ORPHANS,
    WARN_UNMATCHED_ENTRY,
    AmbiguousLink,
    TraceMap,
    build_trace_map,
    link_sequences,
)
from bffprobe.fuzz import FuzzCase, TestSequence
from conftest import make_event

BFF = "10.0.0.5:8000"
B1 = "10.0.0.6:8081"
B2 = "10.0.0.7:8082"


def log_of(events):
    return CaptureLog(run_id="r", events=events)


class TestBuildTraceMap:
    def test_hand_trace(self):
        events = [
            make_event(1, BFF, uri="/m1"),
            make_event(2, B1, uri="/s1"),
            make_event(3, B2, uri="/s2"),
            make_event(4, BFF, uri="/m2"),
            make_event(5, B1, uri="/s3"),
        ]
        tm = build_trace_map(log_of(events), BFF)
        assert len(tm.entries) == 2
        assert tm.orphans == []
        first, second = tm.entries
        assert first.main.uri == "/m1" and [s.uri for s in first.subs] == ["/s1", "/s2"]
        assert second.main.uri == "/m2" and [s.uri for s in second.subs] == ["/s3"]
        assert first.entry_id == "t0000" and second.entry_id == "t0001"

    def test_empty_log(self):
        tm = build_trace_map(log_of([]), BFF)
        assert tm.entries == [] and tm.orphans == []
        assert WARN_NO_BFF_TRAFFIC in tm.warnings

    def test_all_orphans_when_no_main(self):
        events = [make_event(1, B1), make_event(2, B2)]
        tm = build_trace_map(log_of(events), BFF)
        assert len(tm.orphans) == 2
        assert WARN_NO_BFF_TRAFFIC in tm.warnings
        assert WARN_ORPHANS in tm.warnings

    def test_leading_orphans_then_entries(self):
        events = [make_event(1, B1, uri="/health"), make_event(2, BFF), make_event(3, B1)]
        tm = build_trace_map(log_of(events), BFF)
        assert [o.uri for o in tm.orphans] == ["/health"]
        assert len(tm.entries) == 1 and len(tm.entries[0].subs) == 1

    def test_partition_counts(self):
        events = [
            make_event(1, B1),
            make_event(2, BFF),
            make_event(3, B1),
            make_event(4, B2),
            make_event(5, BFF),
        ]
        tm = build_trace_map(log_of(events), BFF)
        assert tm.event_count == len(events)

    def test_keys_on_host_and_port(self):
        # same port as the BFF on a different host must not open an entry
        other_host_same_port = "10.0.0.6:8000"
        events = [make_event(1, BFF), make_event(2, other_host_same_port)]
        tm = build_trace_map(log_of(events), BFF)
        assert len(tm.entries) == 1
        assert [s.destination for s in tm.entries[0].subs] == [other_host_same_port]

    def test_roundtrip(self):
        events = [make_event(1, BFF), make_event(2, B1)]
        tm = build_trace_map(log_of(events), BFF)
        assert TraceMap.from_dict(tm.to_dict()) == tm

    @settings(max_examples=100, deadline=None)
    @given(kinds=st.lists(st.sampled_from([BFF, B1, B2]), max_size=20))
    def test_partition_property(self, kinds):
        events = [make_event(i, dest) for i, dest in enumerate(kinds)]
        tm = build_trace_map(log_of(events), BFF)
        # every event lands in exactly one bucket
        assert tm.event_count == len(events)
        assert len(tm.entries) == kinds.count(BFF)
        # positional soundness: subs of entry i sit strictly between mains i and i+1
        flattened = [o for o in tm.orphans]
        for entry in tm.entries:
            flattened.append(entry.main)
            flattened.extend(entry.subs)
        assert [e.ts for e in flattened] == [e.ts for e in events]

    @settings(max_examples=50, deadline=None)
    @given(kinds=st.lists(st.sampled_from([BFF, B1, B2]), max_size=20))
    def test_idempotence(self, kinds):
        events = [make_event(i, dest) for i, dest in enumerate(kinds)]
        tm = build_trace_map(log_of(events), BFF)
        replay = list(tm.orphans)
        for entry in tm.entries:
            replay.append(entry.main)
            replay.extend(entry.subs)
        again = build_trace_map(log_of(replay), BFF)
        assert again.to_dict() == tm.to_dict()


def case_with_window(sent_at, received_at, op="listProducts"):
    return FuzzCase(operation=op, bindings={}, sent_at=sent_at, received_at=received_at)


class TestLinkSequences:
    def test_single_candidate_links(self):
        tm = build_trace_map(log_of([make_event(150, BFF)]), BFF)
        seq = TestSequence(id="s0", cases=[case_with_window(100, 200)])
        tm = link_sequences(tm, [seq])
        assert tm.entries[0].sequence_ref == "s0/0"

    def test_no_cases_leaves_entry_unmatched(self):
        tm = build_trace_map(log_of([make_event(150, BFF)]), BFF)
        tm = link_sequences(tm, [])
        assert tm.entries[0].sequence_ref is None
        assert WARN_UNMATCHED_ENTRY in tm.entries[0].annotations
        assert WARN_UNMATCHED_ENTRY in tm.warnings

    def test_two_overlapping_cases_raise_ambiguous(self):
        tm = build_trace_map(log_of([make_event(150, BFF)]), BFF)
        seqs = [
            TestSequence(id="s0", cases=[case_with_window(100, 200)]),
            TestSequence(id="s1", cases=[case_with_window(120, 180)]),
        ]
        with pytest.raises(AmbiguousLink):
            link_sequences(tm, seqs)

    def test_one_case_claiming_two_entries_raises(self):
        tm = build_trace_map(log_of([make_event(150, BFF), make_event(160, BFF)]), BFF)
        seq = TestSequence(id="s0", cases=[case_with_window(100, 200)])
        with pytest.raises(AmbiguousLink):
            link_sequences(tm, [seq])

    def test_nearest_within_quiescence(self):
        # main observed just after the case window closed (still in quiescence)
        tm = build_trace_map(log_of([make_event(250_000, BFF)]), BFF)
        seq = TestSequence(id="s0", cases=[case_with_window(100_000, 200_000)])
        tm = link_sequences(tm, [seq], quiescence=0.25)
        assert tm.entries[0].sequence_ref == "s0/0"

    def test_outside_quiescence_unmatched(self):
        tm = build_trace_map(log_of([make_event(2_000_000, BFF)]), BFF)
        seq = TestSequence(id="s0", cases=[case_with_window(100_000, 200_000)])
        tm = link_sequences(tm, [seq], quiescence=0.25)
        assert tm.entries[0].sequence_ref is None

    def test_unexecuted_cases_are_not_candidates(self):
        tm = build_trace_map(log_of([make_event(150, BFF)]), BFF)
        skipped = FuzzCase(operation="x", bindings={})  # never sent
        live = case_with_window(100, 200)
        seq = TestSequence(id="s0", cases=[skipped, live])
        tm = link_sequences(tm, [seq])
        assert tm.entries[0].sequence_ref == "s0/1"
