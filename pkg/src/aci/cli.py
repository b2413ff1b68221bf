"""The ``aci`` command line: replay, batch, serve, query, train."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from typing import Optional

import click

from .batch import BatchJob, run_batch
from .ingest import ReplayClock, load_transcript, push_transcript
from .pipeline import Engine, PipelineConfig
from .store import CallStore, Query, QueryError
from .trainer import (
    Corpus,
    SynonymModel,
    annotate_corpus,
    load_labels,
    tokens_for_span,
    verify_intent,
)
from .intents import parse_intents


def _env_config() -> dict:
    """Defaults from the JSON file named by ACI_CONFIG, when set."""
    path = os.environ.get("ACI_CONFIG")
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"bad ACI_CONFIG file {path}: {exc}")


def _build_config(intents: Optional[str], rules: Optional[str], gazetteers: Optional[str]) -> PipelineConfig:
    env = _env_config()
    return PipelineConfig.load(
        intents_dir=intents or env.get("intents"),
        rules_dir=rules or env.get("rules"),
        gazetteers_dir=gazetteers or env.get("gazetteers"),
    )


@click.group()
def main() -> None:
    """Conversational-intelligence engine for call-center transcripts."""


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--speed", type=float, default=None, help="Accelerated replay factor.")
@click.option("--batch", "batch_mode", is_flag=True, help="Replay at maximum speed.")
@click.option("--server", "server_url", default=None, help="Push to host:port instead of running locally.")
@click.option("--intents", type=click.Path(exists=True), default=None)
@click.option("--rules", type=click.Path(exists=True), default=None)
@click.option("--gazetteers", type=click.Path(exists=True), default=None)
@click.option("--quiet", is_flag=True, help="Suppress event output in local mode.")
def replay(files, speed, batch_mode, server_url, intents, rules, gazetteers, quiet) -> None:
    """Replay transcript FILES in real time (default), accelerated, or batch."""
    if speed is not None and batch_mode:
        raise click.UsageError("--speed and --batch are mutually exclusive")
    clock = (
        ReplayClock.batch()
        if batch_mode
        else ReplayClock.accelerated(speed) if speed else ReplayClock.realtime()
    )
    if server_url:
        host, _, port = server_url.rpartition(":")
        for path in files:
            sent = push_transcript(host or "127.0.0.1", int(port), load_transcript(path), clock)
            click.echo(f"{path}: pushed {sent} words")
        return
    config = _build_config(intents, rules, gazetteers)
    engine = Engine(config)
    if not quiet:
        sub = engine.hub.subscribe()
    import threading

    threads = []
    reports = {}
    for path in files:
        file = load_transcript(path)

        def run(f=file, p=path):
            reports[p] = engine.run_transcript(f, clock)

        t = threading.Thread(target=run, daemon=True)
        t.start()
        threads.append(t)
    if not quiet:
        done = threading.Thread(target=lambda: [t.join() for t in threads], daemon=True)
        done.start()
        while True:
            line = sub.get(timeout=0.2)
            if line is not None:
                click.echo(line)
            elif not done.is_alive():
                break
    else:
        for t in threads:
            t.join()
    for path in files:
        report, record = reports[str(path)]
        click.echo(
            f"# {path}: {report.words_emitted} words in {report.duration_s:.2f}s, "
            f"{len(record.events)} events, risk {record.risk}",
            err=True,
        )


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--intents", type=click.Path(exists=True), default=None)
@click.option("--rules", type=click.Path(exists=True), default=None)
@click.option("--gazetteers", type=click.Path(exists=True), default=None)
def batch(paths, store_dir, jobs, intents, rules, gazetteers) -> None:
    """Run transcripts (files or directories) through the pipeline at max speed."""
    inputs: list[Path] = []
    for p in paths:
        p = Path(p)
        inputs.extend(sorted(p.glob("*.jsonl")) if p.is_dir() else [p])
    config = _build_config(intents, rules, gazetteers)
    report = run_batch(BatchJob(inputs=inputs, config=config, store_dir=Path(store_dir), parallelism=jobs))
    click.echo(f"processed {report.processed}, failures {report.failures}, events {report.events_emitted}")
    for path, err in sorted(report.errors.items()):
        click.echo(f"  FAILED {path}: {err}", err=True)
    if report.failures and not report.processed:
        sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=7070, show_default=True)
@click.option("--push-port", type=int, default=7071, show_default=True)
@click.option("--store", "store_dir", default=None, type=click.Path())
@click.option("--intents", type=click.Path(exists=True), default=None)
@click.option("--rules", type=click.Path(exists=True), default=None)
@click.option("--gazetteers", type=click.Path(exists=True), default=None)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None)
def serve(host, port, push_port, store_dir, intents, rules, gazetteers, ui_dir) -> None:
    """Run the query API, subscription stream, and live-push intake."""
    from .server import serve as run_server

    env = _env_config()
    run_server(
        host=host,
        port=env.get("port", port) if port == 7070 else port,
        push_port=env.get("push_port", push_port) if push_port == 7071 else push_port,
        store_dir=store_dir or env.get("store", "store"),
        intents_dir=intents or env.get("intents"),
        rules_dir=rules or env.get("rules"),
        gazetteers_dir=gazetteers or env.get("gazetteers"),
        ui_dir=ui_dir or env.get("ui"),
    )


@main.command()
@click.argument("query_json")
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
def query(query_json, store_dir) -> None:
    """Search the store with a JSON query document."""
    try:
        q = Query.from_json(json.loads(query_json))
    except (json.JSONDecodeError, QueryError) as exc:
        raise click.ClickException(f"bad query: {exc}")
    store = CallStore(store_dir)
    try:
        result = store.search(q)
    finally:
        store.close()
    out = {
        "total": result.total,
        "page": result.page,
        "limit": result.limit,
        "hits": [
            {"call_id": r.call_id, "risk": r.risk, "summary": r.summary, "started_utc_ms": r.started_utc_ms}
            for r in result.hits
        ],
        "aggregations": result.aggregations,
    }
    click.echo(json.dumps(out, indent=2, ensure_ascii=False))


@main.group()
def train() -> None:
    """Intent training against historical corpora."""


def _load_intent_file(path: str) -> list:
    return parse_intents(Path(path).read_text(encoding="utf-8"))


@train.command()
@click.argument("intent_file", type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
def annotate(intent_file, corpus_dir) -> None:
    """Annotate every corpus call with the intents in INTENT_FILE."""
    corpus = Corpus.load(corpus_dir)
    for intent in _load_intent_file(intent_file):
        report = annotate_corpus(intent, corpus)
        click.echo(
            f"{intent.intent_id}: {report.match_count} matches in "
            f"{report.calls_with_matches}/{report.call_count} calls"
        )
        for m in report.matches:
            click.echo(f"  {m.call_id} [{m.speaker.value} {m.first_seq}..{m.last_seq}] "
                       f"score {m.score:.3f}: {m.snippet}")


@train.command()
@click.argument("token")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("-k", type=int, default=10, show_default=True)
def synonyms(token, corpus_dir, k) -> None:
    """Recommend synonyms for TOKEN from corpus co-occurrence."""
    from .analytics import default_stopwords

    corpus = Corpus.load(corpus_dir)
    model = SynonymModel.build(corpus, default_stopwords())
    recs = model.recommend(token.lower(), k)
    if not recs:
        click.echo(f"no recommendations for {token!r}")
        return
    for cand, sim in recs:
        click.echo(f"{cand}\t{sim:.4f}")


@train.command()
@click.argument("intent_file", type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_file", required=True, type=click.Path(exists=True))
def verify(intent_file, corpus_dir, labels_file) -> None:
    """Verify intents against a labeled corpus (precision/recall/F1)."""
    corpus = Corpus.load(corpus_dir)
    corpus.labels = load_labels(labels_file)
    for intent in _load_intent_file(intent_file):
        report = verify_intent(intent, corpus)
        click.echo(f"{intent.intent_id}: {report.match_count} matches, {report.metric_line()}")


@train.command()
@click.argument("intent_id")
@click.argument("call_id")
@click.argument("span")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--intents", "intents_dir", required=True, type=click.Path(exists=True))
@click.option("--speaker", type=click.Choice(["agent", "customer"]), default=None)
def fp(intent_id, call_id, span, corpus_dir, intents_dir, speaker) -> None:
    """Record a false positive: SPAN is first_seq:last_seq of the bad match."""
    from .events import Speaker as Spk

    try:
        first, last = (int(x) for x in span.split(":"))
    except ValueError:
        raise click.ClickException("span must look like 12:17")
    corpus = Corpus.load(corpus_dir)
    call = next((c for c in corpus.calls if c.call_id == call_id), None)
    if call is None:
        raise click.ClickException(f"unknown call {call_id}")
    tokens = tokens_for_span(call, first, last, Spk(speaker) if speaker else None)
    target_file = None
    for f in sorted(Path(intents_dir).glob("*.intent")):
        if any(d.intent_id == intent_id for d in parse_intents(f.read_text(encoding="utf-8"))):
            target_file = f
            break
    if target_file is None:
        raise click.ClickException(f"intent {intent_id} not found under {intents_dir}")
    line = f'!negative "{" ".join(tokens)}"'
    existing = target_file.read_text(encoding="utf-8")
    if line in existing.splitlines():
        click.echo("negative pattern already recorded")
        return
    # append below the matching intent block so the negative binds to it
    out_lines = []
    inserted = False
    in_target = False
    for raw in existing.splitlines():
        stripped = raw.strip()
        if stripped.startswith("intent "):
            if in_target and not inserted:
                out_lines.append(line)
                inserted = True
            in_target = stripped.split()[1].rstrip(":") == intent_id
        out_lines.append(raw)
    if in_target and not inserted:
        out_lines.append(line)
        inserted = True
    target_file.write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    click.echo(f"recorded negative for {intent_id}: {' '.join(tokens)}")


if __name__ == "__main__":
    main()
