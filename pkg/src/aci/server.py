"""HTTP + streaming service layer.

Query endpoints read store snapshots and the live directory; /stream serves
the canonical JSON-lines event feed (snapshot line first).  The live push
intake runs as a separate TCP listener (see ingest.PushServer).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

from fastapi import Body, FastAPI, HTTPException, Query as QueryParam, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .intents import IntentDef, IntentSyntaxError, parse_intents
from .pipeline import CallLifecycleError, Engine
from .store import CallStore, DuplicateCallError, Query, QueryError, encode_record
from .streaming import FilterError, SubscriptionFilter

SUPERVISOR_ACTIONS = ("flag", "acknowledge", "note")
STREAM_KEEPALIVE_S = 15.0


def _record_obj(rec) -> dict[str, Any]:
    return json.loads(encode_record(rec))


def _intent_obj(d: IntentDef) -> dict[str, Any]:
    return {
        "id": d.intent_id,
        "display_name": d.display_name,
        "category": d.category,
        "threshold": d.threshold,
        "pattern_count": len(d.patterns),
        "negative_count": len(d.negative_patterns),
    }


def create_app(engine: Engine, store: CallStore, ui_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="aci", docs_url=None, redoc_url=None)
    hub = engine.hub

    def run_query(q: Query) -> dict[str, Any]:
        result = store.search(q)
        return {
            "hits": [_record_obj(rec) for rec in result.hits],
            "total": result.total,
            "aggregations": result.aggregations,
            "page": result.page,
            "limit": result.limit,
        }

    @app.get("/calls")
    def get_calls(
        terms: str = QueryParam(""),
        intent_ids: str = QueryParam(""),
        risk_min: Optional[int] = None,
        risk_max: Optional[int] = None,
        time_from_ms: Optional[int] = None,
        time_to_ms: Optional[int] = None,
        aggregations: str = QueryParam(""),
        page: int = 0,
        limit: int = 100,
    ):
        try:
            q = Query(
                terms=terms.split(),
                intent_ids=[i for i in intent_ids.split(",") if i],
                risk_min=risk_min,
                risk_max=risk_max,
                time_from_ms=time_from_ms,
                time_to_ms=time_to_ms,
                aggregations=[a for a in aggregations.split(",") if a],
                page=page,
                limit=limit,
            )
        except QueryError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return run_query(q)

    @app.post("/calls/search")
    def post_search(body: dict = Body(...)):
        try:
            q = Query.from_json(body)
        except QueryError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return run_query(q)

    @app.get("/calls/{call_id}")
    def get_call(call_id: str):
        rec = store.get(call_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown call {call_id}")
        return _record_obj(rec)

    @app.get("/live")
    def get_live():
        return {"calls": hub.directory.snapshot()}

    @app.post("/calls/{call_id}/action")
    def post_action(call_id: str, body: dict = Body(...)):
        action = body.get("action")
        if action not in SUPERVISOR_ACTIONS:
            raise HTTPException(status_code=400, detail=f"action must be one of {SUPERVISOR_ACTIONS}")
        actor = str(body.get("actor", "supervisor"))
        note = str(body.get("note", ""))
        try:
            event = engine.inject_action(call_id, action, actor, note)
        except CallLifecycleError:
            if store.get(call_id) is not None:
                raise HTTPException(status_code=409, detail=f"call {call_id} already ended")
            raise HTTPException(status_code=404, detail=f"call {call_id} is not live")
        return {"ok": True, "seq": event.global_seq}

    @app.get("/intents")
    def get_intents():
        return {"intents": [_intent_obj(d) for d in engine.config.intents]}

    @app.post("/intents")
    def post_intent(body: dict = Body(...)):
        source = body.get("source")
        if not isinstance(source, str):
            raise HTTPException(status_code=400, detail="body must carry intent grammar in 'source'")
        try:
            defs = parse_intents(source, engine.config.user_entity_types())
        except IntentSyntaxError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        added = []
        for d in defs:
            try:
                engine.add_intent(d)
            except ValueError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            added.append(_intent_obj(d))
        return {"added": added}

    @app.get("/stream")
    def stream(
        request: Request,
        call_ids: str = QueryParam(""),
        event_types: str = QueryParam(""),
        min_severity: Optional[str] = None,
        capacity: int = 1024,
    ):
        try:
            flt = SubscriptionFilter(
                call_ids=frozenset(c for c in call_ids.split(",") if c) or None,
                event_types=frozenset(t for t in event_types.split(",") if t) or None,
                min_severity=min_severity,
            )
            sub = hub.subscribe(flt, capacity=capacity)
        except (FilterError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        def gen():
            try:
                while True:
                    line = sub.get(timeout=STREAM_KEEPALIVE_S)
                    if line is None:
                        if sub.closed:
                            return
                        yield "\n"  # keep-alive; blank lines are ignorable framing
                        continue
                    yield line + "\n"
            finally:
                hub.unsubscribe(sub)

        return StreamingResponse(gen(), media_type="application/x-ndjson")

    @app.exception_handler(DuplicateCallError)
    def dup_handler(_request, exc):  # pragma: no cover - defensive
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(
    host: str = "127.0.0.1",
    port: int = 7070,
    push_port: int = 7071,
    store_dir: str | Path = "store",
    intents_dir: Optional[str | Path] = None,
    rules_dir: Optional[str | Path] = None,
    gazetteers_dir: Optional[str | Path] = None,
    ui_dir: Optional[str | Path] = None,
) -> None:
    """Run the query API, event stream, and live-push intake until interrupted."""
    import uvicorn

    from .ingest import PushServer
    from .pipeline import PipelineConfig

    config = PipelineConfig.load(
        intents_dir=intents_dir, rules_dir=rules_dir, gazetteers_dir=gazetteers_dir
    )
    store = CallStore(store_dir)
    engine = Engine(config, store=store)
    push = PushServer(engine, host=host, port=push_port)
    push.serve_in_background()
    app = create_app(engine, store, ui_dir=ui_dir)
    try:
        # open /stream responses park in sub.get(); don't let them stall shutdown
        uvicorn.run(app, host=host, port=port, log_level="warning",
                    timeout_graceful_shutdown=3)
    finally:
        push.shutdown()
        store.close()
