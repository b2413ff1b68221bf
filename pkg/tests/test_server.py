"""HTTP query API and the ndjson subscription stream."""

import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from aci.events import Speaker
from aci.pipeline import Engine, PipelineConfig
from aci.server import create_app
from aci.store import CallStore
from aci.intents import parse_intents
from aci.rules import parse_rules

from genutil import make_word


@pytest.fixture()
def rig(tmp_path):
    cfg = PipelineConfig.load()
    cfg.intents = parse_intents('intent refund category billing: "i want a refund"')
    cfg.rules = parse_rules("rule r: intent(refund) severity WARN risk 70",
                            intents=frozenset({"refund"}))
    store = CallStore(tmp_path / "store")
    engine = Engine(cfg, store=store)
    app = create_app(engine, store)
    client = TestClient(app)
    yield engine, store, client
    store.close()


def run_call(engine, call_id="c1", texts="i want a refund".split()):
    p = engine.start_call(call_id, {"agent": "a1"}, "2025-05-05T10:00:00Z")
    t = 0
    for i, text in enumerate(texts):
        p.push_word(make_word(call_id, i, text, t, t + 200, Speaker.CUSTOMER))
        t += 250
    return engine.end_call(call_id)


class TestQueryApi:
    def test_get_call_found_and_missing(self, rig):
        engine, store, client = rig
        rec = run_call(engine)
        r = client.get("/calls/c1")
        assert r.status_code == 200
        body = r.json()
        assert body["call_id"] == "c1"
        assert body["summary"] == rec.summary
        assert body["risk"] == 70
        assert len(body["events"]) == len(rec.events)
        assert client.get("/calls/nope").status_code == 404

    def test_search_endpoints(self, rig):
        engine, store, client = rig
        run_call(engine, "c1")
        run_call(engine, "c2", texts="totally unrelated words".split())
        r = client.get("/calls", params={"terms": "refund"})
        assert r.status_code == 200
        assert [h["call_id"] for h in r.json()["hits"]] == ["c1"]
        r = client.post("/calls/search", json={"intent_ids": ["refund"], "aggregations": ["avg_risk"]})
        assert r.status_code == 200
        assert r.json()["total"] == 1
        assert r.json()["aggregations"]["avg_risk"] == "70.00"
        assert client.post("/calls/search", json={"risk_min": 9, "risk_max": 1}).status_code == 400

    def test_live_directory_endpoint(self, rig):
        engine, store, client = rig
        p = engine.start_call("live1", {}, None)
        p.push_word(make_word("live1", 0, "hello", 0, 100, Speaker.AGENT))
        r = client.get("/live")
        assert [c["call_id"] for c in r.json()["calls"]] == ["live1"]
        engine.end_call("live1")
        assert client.get("/live").json()["calls"] == []

    def test_action_round_trip(self, rig):
        engine, store, client = rig
        p = engine.start_call("a1", {}, None)
        p.push_word(make_word("a1", 0, "hello", 0, 100, Speaker.AGENT))
        r = client.post("/calls/a1/action", json={"action": "flag", "actor": "sup"})
        assert r.status_code == 200
        rec = engine.end_call("a1")
        assert any(e.type == "supervisor_action" for e in rec.events)
        # ended call: rejected with a clear message
        r = client.post("/calls/a1/action", json={"action": "flag", "actor": "sup"})
        assert r.status_code == 409
        assert client.post("/calls/zzz/action", json={"action": "flag"}).status_code == 404
        assert client.post("/calls/a1/action", json={"action": "dance"}).status_code == 400

    def test_intents_endpoints(self, rig):
        engine, store, client = rig
        r = client.get("/intents")
        assert [i["id"] for i in r.json()["intents"]] == ["refund"]
        r = client.post("/intents", json={"source": 'intent cancel category retention: "cancel my plan"'})
        assert r.status_code == 200
        assert [i["id"] for i in client.get("/intents").json()["intents"]] == ["refund", "cancel"]
        # duplicates and syntax errors are rejected
        assert client.post("/intents", json={"source": 'intent cancel: "x y"'}).status_code == 409
        assert client.post("/intents", json={"source": "intent broken"}).status_code == 400
        # new intent applies to new calls
        rec = run_call(engine, "after", texts="please cancel my plan".split())
        assert "cancel" in rec.intent_ids


from contextlib import contextmanager


@contextmanager
def live_server(app):
    """A real uvicorn server on an ephemeral port (TestClient's in-process
    transport buffers whole bodies, so it cannot exercise /stream)."""
    import uvicorn

    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=5)


class TestStreamEndpoint:
    def test_snapshot_then_events_over_http(self, rig):
        import httpx

        engine, store, client = rig
        app = client.app
        received = []
        ready = threading.Event()
        done = threading.Event()
        with live_server(app) as base:
            def consume():
                with httpx.stream("GET", f"{base}/stream", params={"call_ids": "s1"},
                                  timeout=10.0) as response:
                    ready.set()
                    for line in response.iter_lines():
                        if not line.strip():
                            continue
                        received.append(json.loads(line))
                        if received[-1].get("type") == "call_ended":
                            return

            t = threading.Thread(target=consume, daemon=True)
            t.start()
            assert ready.wait(5)
            time.sleep(0.3)  # let the subscription register
            run_call(engine, "s1")
            t.join(timeout=10)
            assert not t.is_alive()
        assert received[0]["type"] == "live_snapshot"
        events = received[1:]
        assert events[0]["type"] == "call_started"
        assert events[-1]["type"] == "call_ended"
        seqs = [e["seq"] for e in events]
        assert seqs == list(range(len(seqs)))

    def test_bad_filter_rejected(self, rig):
        _, _, client = rig
        r = client.get("/stream", params={"min_severity": "LOUD"})
        assert r.status_code == 400
