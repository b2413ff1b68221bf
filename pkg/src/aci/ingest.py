"""Transcript ingestion: file loading, timed replay, and the live-push protocol.

Transcript files and live pushes share one JSON-lines schema (a header line,
word lines, an optional end line), so batch and real-time runs drive the same
pipeline.  Replay delivers words in global start-time order with the agent
winning ties, which makes emission order a pure function of file contents.
"""

from __future__ import annotations

import datetime as dt
import json
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol

from .events import DecodeError, Speaker, Word, _decode_word, _req, _word_obj

DEFAULT_PUSH_PORT = 7071


class TranscriptError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TranscriptHeader:
    call_id: str
    metadata: dict[str, str]
    reference_time: Optional[str] = None  # ISO-8601; None means unknown

    @property
    def reference_utc_ms(self) -> int:
        if self.reference_time is None:
            return 0
        return int(_parse_iso(self.reference_time).timestamp() * 1000)

    @property
    def reference_date(self) -> dt.date:
        if self.reference_time is None:
            return dt.date(1970, 1, 1)
        return _parse_iso(self.reference_time).date()


def _parse_iso(text: str) -> dt.datetime:
    parsed = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=dt.timezone.utc)
    return parsed


@dataclass(frozen=True)
class TranscriptFile:
    header: TranscriptHeader
    words: tuple[Word, ...]


# --- push/transcript line codec ---------------------------------------------

@dataclass(frozen=True)
class PushLine:
    kind: str  # call_started | word | call_ended
    call_id: str
    word: Optional[Word] = None
    metadata: dict[str, str] = field(default_factory=dict)
    reference_time: Optional[str] = None


def parse_push_line(line: str) -> PushLine:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise DecodeError("line must be a JSON object")
    kind = _req(obj, "type", str)
    call_id = _req(obj, "call_id", str)
    if not call_id:
        raise DecodeError("call_id must be non-empty")
    if kind == "call_started":
        metadata = {str(k): str(v) for k, v in obj.get("metadata", {}).items()}
        ref = obj.get("reference_time")
        if ref is not None:
            if not isinstance(ref, str):
                raise DecodeError("reference_time must be a string")
            try:
                _parse_iso(ref)
            except ValueError:
                raise DecodeError(f"bad reference_time {ref!r}") from None
        return PushLine("call_started", call_id, metadata=metadata, reference_time=ref)
    if kind == "word":
        return PushLine("word", call_id, word=_decode_word(_req(obj, "word", dict), call_id))
    if kind == "call_ended":
        return PushLine("call_ended", call_id)
    raise DecodeError(f"unknown type {kind!r}")


def encode_push_line(item: PushLine) -> str:
    obj: dict[str, Any] = {"v": 1, "type": item.kind, "call_id": item.call_id}
    if item.kind == "call_started":
        obj["metadata"] = {k: item.metadata[k] for k in sorted(item.metadata)}
        if item.reference_time is not None:
            obj["reference_time"] = item.reference_time
    elif item.kind == "word":
        assert item.word is not None
        obj["word"] = _word_obj(item.word)
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def encode_transcript(header: TranscriptHeader, words: list[Word]) -> str:
    lines = [
        encode_push_line(
            PushLine("call_started", header.call_id, metadata=header.metadata,
                     reference_time=header.reference_time)
        )
    ]
    lines.extend(encode_push_line(PushLine("word", header.call_id, word=w)) for w in words)
    lines.append(encode_push_line(PushLine("call_ended", header.call_id)))
    return "\n".join(lines) + "\n"


def load_transcript(path: str | Path) -> TranscriptFile:
    """Parse and validate a transcript file.

    Rejections carry the offending line number: malformed lines, per-speaker
    seq regressions, call_id mismatches, or a missing header.
    """
    header: Optional[TranscriptHeader] = None
    words: list[Word] = []
    last_seq: dict[Speaker, int] = {}
    ended = False
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            item = parse_push_line(raw)
        except DecodeError as exc:
            raise TranscriptError(str(exc), lineno) from None
        if header is None:
            if item.kind != "call_started":
                raise TranscriptError("first line must be call_started", lineno)
            header = TranscriptHeader(item.call_id, item.metadata, item.reference_time)
            continue
        if ended:
            raise TranscriptError("content after call_ended", lineno)
        if item.call_id != header.call_id:
            raise TranscriptError(f"call_id mismatch ({item.call_id!r})", lineno)
        if item.kind == "call_started":
            raise TranscriptError("duplicate call_started", lineno)
        if item.kind == "call_ended":
            ended = True
            continue
        assert item.word is not None
        w = item.word
        prev = last_seq.get(w.speaker)
        if prev is not None and w.seq <= prev:
            raise TranscriptError(f"seq regression line {lineno}", lineno)
        last_seq[w.speaker] = w.seq
        words.append(w)
    if header is None:
        raise TranscriptError("empty transcript", 1)
    return TranscriptFile(header=header, words=tuple(words))


# --- replay -------------------------------------------------------------------

REALTIME = "realtime"
ACCELERATED = "accelerated"
BATCH = "batch"


@dataclass(frozen=True)
class ReplayClock:
    mode: str
    factor: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in (REALTIME, ACCELERATED, BATCH):
            raise ValueError(f"unknown replay mode {self.mode!r}")
        if self.factor <= 0:
            raise ValueError("replay factor must be positive")

    @classmethod
    def realtime(cls) -> "ReplayClock":
        return cls(REALTIME, 1.0)

    @classmethod
    def accelerated(cls, factor: float) -> "ReplayClock":
        return cls(ACCELERATED, factor)

    @classmethod
    def batch(cls) -> "ReplayClock":
        return cls(BATCH)


@dataclass
class ReplayReport:
    words_emitted: int
    duration_s: float
    aborted: bool = False
    error: Optional[str] = None
    latencies_ms: list[float] = field(default_factory=list)


def replay_order(words: tuple[Word, ...]) -> list[Word]:
    """Global delivery order: start time, then AGENT before CUSTOMER, then seq."""
    return sorted(words, key=lambda w: (w.start_ms, w.speaker != Speaker.AGENT, w.seq))


def replay(
    file: TranscriptFile,
    clock: ReplayClock,
    sink: Callable[[Word], None],
    collect_latencies: bool = False,
) -> ReplayReport:
    """Deliver the file's words to ``sink`` on the clock's schedule.

    BATCH delivers immediately; REALTIME/ACCELERATED sleep until each word's
    scheduled start.  A sink exception aborts this call's replay (the caller
    still owns ending the call) and is reported, not raised.
    """
    ordered = replay_order(file.words)
    report = ReplayReport(words_emitted=0, duration_s=0.0)
    t0 = time.perf_counter()
    for w in ordered:
        if clock.mode != BATCH:
            target_s = w.start_ms / 1000.0 / clock.factor
            delay = target_s - (time.perf_counter() - t0)
            if delay > 0:
                time.sleep(delay)
        t_in = time.perf_counter()
        try:
            sink(w)
        except Exception as exc:  # noqa: BLE001 - per-call isolation
            report.aborted = True
            report.error = f"sink failed: {exc}"
            break
        if collect_latencies:
            report.latencies_ms.append((time.perf_counter() - t_in) * 1000.0)
        report.words_emitted += 1
    report.duration_s = time.perf_counter() - t0
    return report


# --- live push server ---------------------------------------------------------

class CallSink(Protocol):
    """What the push server needs from the pipeline side."""

    def start_call(self, call_id: str, metadata: dict[str, str], reference_time: Optional[str]) -> None: ...

    def push_word(self, call_id: str, word: Word) -> None: ...

    def end_call(self, call_id: str) -> None: ...


def _error_line(reason: str) -> bytes:
    return (json.dumps({"v": 1, "type": "error", "reason": reason},
                       separators=(",", ":")) + "\n").encode("utf-8")


class _PushHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: PushServer = self.server  # type: ignore[assignment]
        active: Optional[str] = None
        try:
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace").strip()
                if not line:
                    continue
                try:
                    item = parse_push_line(line)
                    if item.kind == "call_started":
                        if active is not None:
                            raise DecodeError("call already active on this connection")
                        server.sink.start_call(item.call_id, item.metadata, item.reference_time)
                        active = item.call_id
                    elif active is None:
                        raise DecodeError("no active call")
                    elif item.call_id != active:
                        raise DecodeError("call_id does not match active call")
                    elif item.kind == "word":
                        assert item.word is not None
                        server.sink.push_word(active, item.word)
                    else:  # call_ended
                        server.sink.end_call(active)
                        active = None
                except (DecodeError, ValueError) as exc:
                    # a malformed line terminates this connection's call only
                    if active is not None:
                        server.sink.end_call(active)
                        active = None
                    try:
                        self.wfile.write(_error_line(str(exc)))
                    except OSError:
                        pass
                    return
        finally:
            if active is not None:
                server.sink.end_call(active)


class PushServer(socketserver.ThreadingTCPServer):
    """JSON-lines word intake; one active call per connection at a time."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, sink: CallSink, host: str = "127.0.0.1", port: int = DEFAULT_PUSH_PORT):
        super().__init__((host, port), _PushHandler)
        self.sink = sink

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="aci-push", daemon=True)
        thread.start()
        return thread


def push_transcript(host: str, port: int, file: TranscriptFile, clock: ReplayClock) -> int:
    """Client side: stream a transcript to a push server on the given clock."""
    sent = 0
    with socket.create_connection((host, port)) as conn:
        out = conn.makefile("wb")
        out.write((encode_push_line(
            PushLine("call_started", file.header.call_id, metadata=file.header.metadata,
                     reference_time=file.header.reference_time)) + "\n").encode("utf-8"))
        out.flush()

        def send(word: Word) -> None:
            out.write((encode_push_line(PushLine("word", file.header.call_id, word=word)) + "\n").encode("utf-8"))
            out.flush()

        report = replay(file, clock, send)
        sent = report.words_emitted
        out.write((encode_push_line(PushLine("call_ended", file.header.call_id)) + "\n").encode("utf-8"))
        out.flush()
    return sent
