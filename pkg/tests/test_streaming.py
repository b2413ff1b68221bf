"""Hub fan-out, subscription filters, slow-consumer policy, live directory."""

import json
import random

import pytest

from aci.events import (
    CallEnded,
    CallEvent,
    CallStarted,
    IntentMatch,
    IntentMatched,
    RiskScoreUpdated,
    RuleTriggered,
    Speaker,
    encode_event,
)
from aci.streaming import (
    EventHub,
    FilterError,
    LiveCallDirectory,
    SubscriptionFilter,
    overflow_notice,
)

from genutil import random_valid_stream


def drain(sub, expect=None, timeout=1.0):
    out = []
    while True:
        line = sub.get(timeout=0.05 if expect is None else timeout)
        if line is None:
            break
        out.append(line)
        if expect is not None and len(out) >= expect:
            break
    return out


def start_ev(cid, seq=0):
    return CallEvent(cid, seq, 0, CallStarted())


def trigger_ev(cid, seq, severity):
    return CallEvent(cid, seq, 100, RuleTriggered("r", severity, "d"))


class TestHub:
    def test_snapshot_first_then_events(self):
        hub = EventHub()
        hub.publish(start_ev("c1"))
        sub = hub.subscribe()
        e = trigger_ev("c1", 1, "WARN")
        hub.publish(e)
        lines = drain(sub, expect=2)
        snap = json.loads(lines[0])
        assert snap["type"] == "live_snapshot"
        assert [c["call_id"] for c in snap["calls"]] == ["c1"]
        assert lines[1] == encode_event(e)

    def test_publish_returns_delivered_count(self):
        hub = EventHub()
        assert hub.publish(start_ev("c1")) == 0
        subs = [hub.subscribe() for _ in range(3)]
        assert hub.publish(trigger_ev("c1", 1, "INFO")) == 3
        for s in subs:
            hub.unsubscribe(s)

    def test_call_id_filter(self):
        hub = EventHub()
        sub = hub.subscribe(SubscriptionFilter(call_ids=frozenset({"c2"})))
        hub.publish(start_ev("c1"))
        hub.publish(start_ev("c2"))
        lines = drain(sub, expect=2)
        events = [json.loads(l) for l in lines[1:]]
        assert all(e["call_id"] == "c2" for e in events)

    def test_event_type_and_severity_filters(self):
        hub = EventHub()
        types_only = hub.subscribe(SubscriptionFilter(event_types=frozenset({"rule_triggered"})))
        severe_only = hub.subscribe(SubscriptionFilter(min_severity="CRITICAL"))
        hub.publish(start_ev("c1"))
        hub.publish(trigger_ev("c1", 1, "INFO"))
        hub.publish(trigger_ev("c1", 2, "CRITICAL"))
        got_types = [json.loads(l)["type"] for l in drain(types_only, expect=3)]
        assert got_types[0] == "live_snapshot"
        assert got_types[1:] == ["rule_triggered", "rule_triggered"]
        severe = [json.loads(l) for l in drain(severe_only, expect=3)]
        triggers = [e for e in severe if e["type"] == "rule_triggered"]
        assert [t["severity"] for t in triggers] == ["CRITICAL"]

    def test_invalid_filter_rejected(self):
        with pytest.raises(FilterError):
            SubscriptionFilter(min_severity="LOUD")
        with pytest.raises(FilterError):
            SubscriptionFilter(event_types=frozenset({"nonsense"}))

    def test_two_subscribers_identical_sequences(self):
        hub = EventHub()
        a = hub.subscribe()
        b = hub.subscribe()
        rng = random.Random(17)
        for e in random_valid_stream(rng, "cx", n_middle=20):
            hub.publish(e)
        la = drain(a, expect=23)
        lb = drain(b, expect=23)
        assert la == lb

    def test_per_call_ordering_preserved(self):
        hub = EventHub()
        sub = hub.subscribe()
        rng = random.Random(23)
        streams = {cid: random_valid_stream(rng, cid, n_middle=10) for cid in ("a", "b")}
        # interleave the two calls
        order = []
        iters = {cid: iter(s) for cid, s in streams.items()}
        remaining = {cid: len(s) for cid, s in streams.items()}
        while any(remaining.values()):
            cid = rng.choice([c for c, n in remaining.items() if n])
            order.append(next(iters[cid]))
            remaining[cid] -= 1
        for e in order:
            hub.publish(e)
        lines = drain(sub, expect=1 + len(order))
        per_call = {}
        for line in lines[1:]:
            obj = json.loads(line)
            per_call.setdefault(obj["call_id"], []).append(obj["seq"])
        for cid, seqs in per_call.items():
            assert seqs == list(range(len(seqs))), cid

    def test_slow_consumer_disconnected_with_notice(self):
        hub = EventHub()
        slow = hub.subscribe(capacity=8)
        fast = hub.subscribe(capacity=4096)
        hub.publish(start_ev("c1"))
        for i in range(1, 50):
            hub.publish(trigger_ev("c1", i, "INFO"))
        # the slow queue filled up (snapshot + 7 events), so it was dropped
        assert hub.subscriber_count() == 1
        lines = drain(slow)
        assert lines[-1] == overflow_notice()
        assert len(lines) == 9  # 8 buffered lines + the final notice
        fast_lines = drain(fast)
        assert len(fast_lines) == 1 + 50  # snapshot + every published event

    def test_publisher_never_blocks_on_stalled_consumer(self):
        hub = EventHub()
        hub.subscribe(capacity=1)
        import time

        t0 = time.perf_counter()
        for i in range(5000):
            hub.publish(trigger_ev("c1", i, "INFO"))
        assert time.perf_counter() - t0 < 2.0


class TestLiveDirectory:
    def test_lifecycle_tracking(self):
        d = LiveCallDirectory()
        d.apply(start_ev("c1"))
        d.apply(start_ev("c2"))
        assert d.live_ids() == ["c1", "c2"]
        d.apply(CallEvent("c1", 1, 5000, CallEnded()))
        assert d.live_ids() == ["c2"]

    def test_recent_intents_and_risk(self):
        d = LiveCallDirectory()
        d.apply(start_ev("c1"))
        for i in range(7):
            m = IntentMatch(f"i{i}", Speaker.CUSTOMER, i, i, 1.0, 0)
            d.apply(CallEvent("c1", i + 1, 1000 * i, IntentMatched(m)))
        d.apply(CallEvent("c1", 8, 9000, RiskScoreUpdated(70)))
        snap = d.snapshot()
        assert len(snap) == 1
        entry = snap[0]
        assert entry["risk"] == 70
        assert entry["recent_intents"] == ["i6", "i5", "i4", "i3", "i2"]  # last 5, newest first
        assert entry["last_ts_ms"] == 9000

    def test_directory_contains_only_live_calls(self):
        d = LiveCallDirectory()
        rng = random.Random(31)
        for e in random_valid_stream(rng, "gone", n_middle=5):
            d.apply(e)
        assert d.snapshot() == []
