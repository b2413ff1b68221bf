"""Store: indexing, search vs linear scan, aggregations, durability, paging."""

import random
from decimal import Decimal

import pytest

from aci.events import (
    CallEnded,
    CallEvent,
    CallStarted,
    EntityMatch,
    IntegerValue,
    MoneyValue,
    Speaker,
)
from aci.store import (
    CallRecord,
    CallStore,
    DuplicateCallError,
    EntityRange,
    Query,
    QueryError,
    aggregate,
    decode_record,
    encode_record,
)

WORDS = ("billing refund late delivery password upgrade cancel account "
         "payment credit invoice error manager shipping").split()
INTENT_POOL = ["refund_request", "cancel_service", "escalation", "greeting"]


def make_record(rng: random.Random, call_id: str) -> CallRecord:
    n_lines = rng.randrange(1, 6)
    transcript = []
    for _ in range(n_lines):
        spk = rng.choice(["agent", "customer"])
        line = " ".join(rng.choice(WORDS) for _ in range(rng.randrange(2, 9))).capitalize() + "."
        transcript.append((spk, line))
    intents = tuple(rng.choice(INTENT_POOL) for _ in range(rng.randrange(0, 4)))
    entities = tuple(
        EntityMatch("MONEY", Speaker.CUSTOMER, i, i + 1, "x", MoneyValue(rng.randrange(0, 50000), "USD"))
        for i in range(rng.randrange(0, 3))
    )
    started = 1_700_000_000_000 + rng.randrange(0, 10) * 86_400_000 + rng.randrange(0, 3_600_000)
    dur = rng.randrange(10_000, 600_000)
    events = (
        CallEvent(call_id, 0, 0, CallStarted()),
        CallEvent(call_id, 1, dur, CallEnded()),
    )
    return CallRecord(
        call_id=call_id,
        metadata={"agent": f"a{rng.randrange(4)}", "project": rng.choice(["alpha", "beta"])},
        transcript=tuple(transcript),
        events=events,
        intent_ids=intents,
        entities=entities,
        keyphrases=(("billing error", 4.0),),
        summary="Topic: test.",
        risk=rng.randrange(0, 101),
        started_utc_ms=started,
        ended_utc_ms=started + dur,
        duration_ms=dur,
    )


def linear_scan(records, q: Query):
    """Independent predicate (own tokenization), ordered like the store."""
    out = []
    for rec in records:
        tokens = set()
        for _, line in rec.transcript:
            for t in line.split():
                t = t.strip(".,?").lower()
                if t:
                    tokens.add(t)
        if any(t not in tokens for t in q.terms):
            continue
        if any(i not in set(rec.intent_ids) for i in q.intent_ids):
            continue
        ok = True
        for rng_f in q.entity_ranges:
            hit = False
            for ent in rec.entities:
                if ent.type != rng_f.entity_type or not isinstance(ent.value, (MoneyValue, IntegerValue)):
                    continue
                v = Decimal(ent.value.amount_minor if isinstance(ent.value, MoneyValue) else ent.value.value)
                if (rng_f.minimum is None or v >= rng_f.minimum) and (
                    rng_f.maximum is None or v <= rng_f.maximum
                ):
                    hit = True
                    break
            if not hit:
                ok = False
                break
        if not ok:
            continue
        if any(rec.metadata.get(k) != v for k, v in q.metadata_equals.items()):
            continue
        if q.risk_min is not None and rec.risk < q.risk_min:
            continue
        if q.risk_max is not None and rec.risk > q.risk_max:
            continue
        if q.time_from_ms is not None and rec.started_utc_ms < q.time_from_ms:
            continue
        if q.time_to_ms is not None and rec.started_utc_ms > q.time_to_ms:
            continue
        out.append(rec)
    out.sort(key=lambda r: (-r.ended_utc_ms, r.call_id))
    return out


def random_query(rng: random.Random) -> Query:
    q = Query()
    if rng.random() < 0.5:
        q.terms = [rng.choice(WORDS) for _ in range(rng.randrange(1, 3))]
    if rng.random() < 0.4:
        q.intent_ids = [rng.choice(INTENT_POOL)]
    if rng.random() < 0.3:
        lo = rng.randrange(0, 40000)
        q.entity_ranges = [EntityRange("MONEY", Decimal(lo), Decimal(lo + 15000))]
    if rng.random() < 0.3:
        q.metadata_equals = {"project": rng.choice(["alpha", "beta"])}
    if rng.random() < 0.4:
        q.risk_min = rng.randrange(0, 60)
    if rng.random() < 0.3:
        q.risk_max = rng.randrange(60, 101)
    if rng.random() < 0.3:
        base = 1_700_000_000_000
        q.time_from_ms = base + rng.randrange(0, 5) * 86_400_000
    q.aggregations = ["count_by_intent", "histogram_by_day", "avg_risk"]
    q.limit = rng.choice([3, 10, 100])
    return q


class TestStoreBasics:
    def test_index_then_get(self, tmp_path):
        store = CallStore(tmp_path)
        rec = make_record(random.Random(1), "c1")
        store.index_call(rec)
        assert store.get("c1") == rec
        assert store.count() == 1
        store.close()

    def test_duplicate_rejected(self, tmp_path):
        store = CallStore(tmp_path)
        rec = make_record(random.Random(1), "c1")
        store.index_call(rec)
        with pytest.raises(DuplicateCallError):
            store.index_call(rec)
        store.close()

    def test_record_codec_round_trip(self):
        rng = random.Random(9)
        for i in range(50):
            rec = make_record(rng, f"c{i}")
            assert decode_record(encode_record(rec)) == rec

    def test_bulk_count(self, tmp_path):
        rng = random.Random(2)
        store = CallStore(tmp_path)
        for i in range(200):
            store.index_call(make_record(rng, f"c{i:04d}"))
        assert store.count() == 200
        store.close()

    def test_reopen_reproduces_results(self, tmp_path):
        rng = random.Random(3)
        store = CallStore(tmp_path)
        for i in range(60):
            store.index_call(make_record(rng, f"c{i:03d}"))
        q = Query(terms=["billing"], aggregations=["count_by_intent", "avg_risk"])
        before = store.search(q)
        store.close()
        reopened = CallStore(tmp_path)
        after = reopened.search(q)
        assert [r.call_id for r in before.hits] == [r.call_id for r in after.hits]
        assert before.total == after.total and before.aggregations == after.aggregations
        reopened.close()

    def test_reopen_without_index_file(self, tmp_path):
        rng = random.Random(4)
        store = CallStore(tmp_path)
        for i in range(20):
            store.index_call(make_record(rng, f"c{i}"))
        store.close()
        (tmp_path / "index.json").unlink()
        reopened = CallStore(tmp_path)
        assert reopened.count() == 20
        assert reopened.search(Query(terms=["refund"])).total == linear_scan(
            reopened.all_records(), Query(terms=["refund"])
        ).__len__()
        reopened.close()


class TestSearch:
    def test_empty_query_returns_all(self, tmp_path):
        rng = random.Random(5)
        store = CallStore(tmp_path)
        for i in range(25):
            store.index_call(make_record(rng, f"c{i:02d}"))
        result = store.search(Query())
        assert result.total == 25
        store.close()

    def test_unique_term_hits_one_call(self, tmp_path):
        store = CallStore(tmp_path)
        rng = random.Random(6)
        for i in range(10):
            store.index_call(make_record(rng, f"c{i}"))
        special = make_record(rng, "needle")
        special = CallRecord(**{**special.__dict__, "transcript": (("agent", "Zyzzyva protocol engaged."),)})
        store.index_call(special)
        result = store.search(Query(terms=["zyzzyva"]))
        assert [r.call_id for r in result.hits] == ["needle"]
        store.close()

    def test_search_equals_linear_scan_on_random_corpus(self, tmp_path):
        rng = random.Random(7)
        store = CallStore(tmp_path)
        records = [make_record(rng, f"c{i:03d}") for i in range(120)]
        for rec in records:
            store.index_call(rec)
        for _ in range(80):
            q = random_query(rng)
            got = store.search(q)
            want = linear_scan(records, q)
            assert [r.call_id for r in got.hits] == [r.call_id for r in want[q.page * q.limit:(q.page + 1) * q.limit]]
            assert got.total == len(want)
            assert got.aggregations == aggregate(want, q.aggregations)
        store.close()

    def test_pagination_concatenates_to_full_list(self, tmp_path):
        rng = random.Random(8)
        store = CallStore(tmp_path)
        for i in range(37):
            store.index_call(make_record(rng, f"c{i:02d}"))
        full = store.search(Query(limit=1000)).hits
        paged = []
        page = 0
        while True:
            chunk = store.search(Query(limit=5, page=page)).hits
            if not chunk:
                break
            paged.extend(chunk)
            page += 1
        assert [r.call_id for r in paged] == [r.call_id for r in full]
        store.close()

    def test_malformed_ranges_rejected(self):
        with pytest.raises(QueryError):
            Query(risk_min=50, risk_max=10)
        with pytest.raises(QueryError):
            EntityRange("MONEY", Decimal(10), Decimal(1))
        with pytest.raises(QueryError):
            Query(limit=100000)
        with pytest.raises(QueryError):
            Query.from_json({"aggregations": ["bogus"]})


class TestAggregations:
    def test_empty_match_set(self):
        out = aggregate([], ["count_by_intent", "histogram_by_day", "avg_risk"])
        assert out["count_by_intent"] == {} and out["histogram_by_day"] == {}
        assert "avg_risk" not in out

    def test_avg_risk_rounding(self):
        rng = random.Random(10)
        a = make_record(rng, "a")
        b = make_record(rng, "b")
        a = CallRecord(**{**a.__dict__, "risk": 20})
        b = CallRecord(**{**b.__dict__, "risk": 30})
        assert aggregate([a, b], ["avg_risk"])["avg_risk"] == "25.00"
        c = CallRecord(**{**a.__dict__, "risk": 21})
        # 20, 30, 21 -> 23.666... rounds half-up to 23.67
        assert aggregate([a, b, c], ["avg_risk"])["avg_risk"] == "23.67"

    def test_counts_match_bruteforce(self):
        rng = random.Random(11)
        records = [make_record(rng, f"c{i}") for i in range(50)]
        out = aggregate(records, ["count_by_intent", "histogram_by_day"])
        want: dict[str, int] = {}
        for rec in records:
            for intent in set(rec.intent_ids):
                want[intent] = want.get(intent, 0) + 1
        assert out["count_by_intent"] == want
        assert sum(out["histogram_by_day"].values()) == 50
