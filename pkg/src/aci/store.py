"""Embedded call store: append-only record log, inverted index, query engine.

The store directory holds ``calls.jsonl`` (one canonical record line per
completed call) plus a derived ``index.json`` that is reused only while it
matches the log; otherwise the index is rebuilt from the records on open.
"""

from __future__ import annotations

import json
import threading
from bisect import insort
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Optional

from .events import (
    CallEvent,
    DecodeError,
    EntityMatch,
    _decode_entity,
    _entity_obj,
    decode_event,
    encode_event,
    numeric_value,
)

RECORD_VERSION = 1
MAX_PAGE_LIMIT = 1000
DEFAULT_PAGE_LIMIT = 100


class DuplicateCallError(ValueError):
    pass


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class CallRecord:
    call_id: str
    metadata: dict[str, str]
    transcript: tuple[tuple[str, str], ...]  # (speaker, refined line)
    events: tuple[CallEvent, ...]
    intent_ids: tuple[str, ...]              # chronological, repeats allowed
    entities: tuple[EntityMatch, ...]
    keyphrases: tuple[tuple[str, float], ...]
    summary: str
    risk: int
    started_utc_ms: int
    ended_utc_ms: int
    duration_ms: int
    ref_time_known: bool = True


def tokenize_text(text: str) -> list[str]:
    return [t.strip(".,?").lower() for t in text.split() if t.strip(".,?")]


def record_tokens(rec: CallRecord) -> list[str]:
    out: list[str] = []
    for _, line in rec.transcript:
        out.extend(tokenize_text(line))
    return out


def encode_record(rec: CallRecord) -> str:
    obj = {
        "v": RECORD_VERSION,
        "type": "call_record",
        "call_id": rec.call_id,
        "metadata": {k: rec.metadata[k] for k in sorted(rec.metadata)},
        "transcript": [[spk, line] for spk, line in rec.transcript],
        "events": [json.loads(encode_event(e)) for e in rec.events],
        "intent_ids": list(rec.intent_ids),
        "entities": [_entity_obj(e) for e in rec.entities],
        "keyphrases": [[text, score] for text, score in rec.keyphrases],
        "summary": rec.summary,
        "risk": rec.risk,
        "started_utc_ms": rec.started_utc_ms,
        "ended_utc_ms": rec.ended_utc_ms,
        "duration_ms": rec.duration_ms,
        "ref_time_known": rec.ref_time_known,
    }
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def decode_record(line: str) -> CallRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid record JSON: {exc.msg}") from None
    if not isinstance(obj, dict) or obj.get("type") != "call_record":
        raise DecodeError("not a call_record line")
    try:
        events = tuple(
            decode_event(json.dumps(e, separators=(",", ":"), ensure_ascii=False))
            for e in obj["events"]
        )
        return CallRecord(
            call_id=obj["call_id"],
            metadata={str(k): str(v) for k, v in obj["metadata"].items()},
            transcript=tuple((spk, line) for spk, line in obj["transcript"]),
            events=events,
            intent_ids=tuple(obj["intent_ids"]),
            entities=tuple(_decode_entity(e) for e in obj["entities"]),
            keyphrases=tuple((t, float(s)) for t, s in obj["keyphrases"]),
            summary=obj["summary"],
            risk=int(obj["risk"]),
            started_utc_ms=int(obj["started_utc_ms"]),
            ended_utc_ms=int(obj["ended_utc_ms"]),
            duration_ms=int(obj["duration_ms"]),
            ref_time_known=bool(obj["ref_time_known"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(f"malformed call_record: {exc}") from None


# --- queries ------------------------------------------------------------------

@dataclass(frozen=True)
class EntityRange:
    entity_type: str
    minimum: Optional[Decimal] = None
    maximum: Optional[Decimal] = None

    def __post_init__(self) -> None:
        if self.minimum is not None and self.maximum is not None and self.minimum > self.maximum:
            raise QueryError("entity range min exceeds max")


AGGREGATION_KINDS = ("count_by_intent", "histogram_by_day", "avg_risk")


@dataclass
class Query:
    terms: list[str] = field(default_factory=list)
    intent_ids: list[str] = field(default_factory=list)
    entity_ranges: list[EntityRange] = field(default_factory=list)
    metadata_equals: dict[str, str] = field(default_factory=dict)
    risk_min: Optional[int] = None
    risk_max: Optional[int] = None
    time_from_ms: Optional[int] = None
    time_to_ms: Optional[int] = None
    aggregations: list[str] = field(default_factory=list)
    page: int = 0
    limit: int = DEFAULT_PAGE_LIMIT

    def __post_init__(self) -> None:
        self.terms = [t.lower() for t in self.terms]
        if not 1 <= self.limit <= MAX_PAGE_LIMIT:
            raise QueryError(f"limit must be in [1,{MAX_PAGE_LIMIT}]")
        if self.page < 0:
            raise QueryError("page must be >= 0")
        if self.risk_min is not None and self.risk_max is not None and self.risk_min > self.risk_max:
            raise QueryError("risk range min exceeds max")
        if (
            self.time_from_ms is not None
            and self.time_to_ms is not None
            and self.time_from_ms > self.time_to_ms
        ):
            raise QueryError("time range min exceeds max")
        for agg in self.aggregations:
            if agg not in AGGREGATION_KINDS:
                raise QueryError(f"unknown aggregation {agg!r}")

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Query":
        if not isinstance(obj, dict):
            raise QueryError("query must be a JSON object")
        ranges = []
        for r in obj.get("entity_ranges", []):
            try:
                ranges.append(
                    EntityRange(
                        entity_type=r["type"],
                        minimum=Decimal(str(r["min"])) if "min" in r and r["min"] is not None else None,
                        maximum=Decimal(str(r["max"])) if "max" in r and r["max"] is not None else None,
                    )
                )
            except (KeyError, TypeError, ArithmeticError):
                raise QueryError(f"malformed entity range {r!r}") from None
        try:
            return cls(
                terms=[str(t) for t in obj.get("terms", [])],
                intent_ids=[str(t) for t in obj.get("intent_ids", [])],
                entity_ranges=ranges,
                metadata_equals={str(k): str(v) for k, v in obj.get("metadata_equals", {}).items()},
                risk_min=obj.get("risk_min"),
                risk_max=obj.get("risk_max"),
                time_from_ms=obj.get("time_from_ms"),
                time_to_ms=obj.get("time_to_ms"),
                aggregations=[str(a) for a in obj.get("aggregations", [])],
                page=int(obj.get("page", 0)),
                limit=int(obj.get("limit", DEFAULT_PAGE_LIMIT)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, QueryError):
                raise
            raise QueryError(f"malformed query: {exc}") from None


def record_matches(rec: CallRecord, q: Query, tokens: Optional[set[str]] = None) -> bool:
    """Predicate used by both the indexed search and the linear-scan path."""
    if q.terms:
        toks = tokens if tokens is not None else set(record_tokens(rec))
        if any(t not in toks for t in q.terms):
            return False
    if q.intent_ids:
        have = set(rec.intent_ids)
        if any(i not in have for i in q.intent_ids):
            return False
    for rng in q.entity_ranges:
        hit = False
        for ent in rec.entities:
            if ent.type != rng.entity_type:
                continue
            v = numeric_value(ent.value)
            if v is None:
                continue
            if rng.minimum is not None and v < rng.minimum:
                continue
            if rng.maximum is not None and v > rng.maximum:
                continue
            hit = True
            break
        if not hit:
            return False
    for key, want in q.metadata_equals.items():
        if rec.metadata.get(key) != want:
            return False
    if q.risk_min is not None and rec.risk < q.risk_min:
        return False
    if q.risk_max is not None and rec.risk > q.risk_max:
        return False
    if q.time_from_ms is not None and rec.started_utc_ms < q.time_from_ms:
        return False
    if q.time_to_ms is not None and rec.started_utc_ms > q.time_to_ms:
        return False
    return True


def aggregate(records: list[CallRecord], kinds: list[str]) -> dict[str, Any]:
    """Exact aggregation tables over a match set (not a page)."""
    out: dict[str, Any] = {}
    for kind in kinds:
        if kind == "count_by_intent":
            counts: dict[str, int] = {}
            for rec in records:
                for intent_id in sorted(set(rec.intent_ids)):
                    counts[intent_id] = counts.get(intent_id, 0) + 1
            out[kind] = {k: counts[k] for k in sorted(counts)}
        elif kind == "histogram_by_day":
            days: dict[str, int] = {}
            for rec in records:
                day = datetime.fromtimestamp(rec.started_utc_ms / 1000, tz=timezone.utc).date().isoformat()
                days[day] = days.get(day, 0) + 1
            out[kind] = {k: days[k] for k in sorted(days)}
        elif kind == "avg_risk":
            if records:
                mean = Decimal(sum(r.risk for r in records)) / Decimal(len(records))
                out[kind] = str(mean.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
        else:
            raise QueryError(f"unknown aggregation {kind!r}")
    return out


@dataclass
class SearchResult:
    hits: list[CallRecord]
    total: int
    aggregations: dict[str, Any]
    page: int
    limit: int


# --- the store -----------------------------------------------------------

class InvertedIndex:
    """token -> sorted posting list of (call_id, positions)."""

    def __init__(self) -> None:
        self._postings: dict[str, list[tuple[str, tuple[int, ...]]]] = {}

    def add(self, call_id: str, tokens: list[str]) -> None:
        by_token: dict[str, list[int]] = {}
        for pos, tok in enumerate(tokens):
            by_token.setdefault(tok, []).append(pos)
        for tok, positions in by_token.items():
            insort(self._postings.setdefault(tok, []), (call_id, tuple(positions)))

    def lookup(self, token: str) -> list[str]:
        return [call_id for call_id, _ in self._postings.get(token.lower(), [])]

    def candidates(self, terms: list[str]) -> Optional[set[str]]:
        """Conjunctive candidate ids, or None when no term narrows the search."""
        if not terms:
            return None
        sets = [set(self.lookup(t)) for t in terms]
        out = sets[0]
        for s in sets[1:]:
            out &= s
        return out

    def to_obj(self) -> dict[str, Any]:
        return {
            tok: {cid: list(pos) for cid, pos in entries}
            for tok, entries in self._postings.items()
        }

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "InvertedIndex":
        idx = cls()
        for tok, entries in obj.items():
            idx._postings[tok] = sorted(
                (cid, tuple(int(p) for p in pos)) for cid, pos in entries.items()
            )
        return idx


class CallStore:
    """Single-writer, many-reader store of completed calls."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._log_path = self.directory / "calls.jsonl"
        self._index_path = self.directory / "index.json"
        self._lock = threading.RLock()
        self._records: dict[str, CallRecord] = {}
        self._order: list[str] = []  # insertion order
        self._index = InvertedIndex()
        self._load()
        self._log = open(self._log_path, "a", encoding="utf-8")

    def _load(self) -> None:
        if self._log_path.exists():
            for lineno, line in enumerate(self._log_path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                rec = decode_record(line)
                if rec.call_id in self._records:
                    raise DecodeError(f"duplicate call {rec.call_id} at line {lineno}")
                self._records[rec.call_id] = rec
                self._order.append(rec.call_id)
        index_obj = None
        if self._index_path.exists():
            try:
                raw = json.loads(self._index_path.read_text(encoding="utf-8"))
                if raw.get("records") == len(self._records):
                    index_obj = raw.get("postings")
            except (json.JSONDecodeError, AttributeError):
                index_obj = None
        if index_obj is not None:
            self._index = InvertedIndex.from_obj(index_obj)
        else:
            for call_id in self._order:
                self._index.add(call_id, record_tokens(self._records[call_id]))

    def flush_index(self) -> None:
        with self._lock:
            obj = {"records": len(self._records), "postings": self._index.to_obj()}
            tmp = self._index_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(obj, separators=(",", ":")), encoding="utf-8")
            tmp.replace(self._index_path)

    def close(self) -> None:
        with self._lock:
            self.flush_index()
            self._log.close()

    def index_call(self, rec: CallRecord) -> None:
        with self._lock:
            if rec.call_id in self._records:
                raise DuplicateCallError(f"call {rec.call_id} already indexed")
            self._log.write(encode_record(rec) + "\n")
            self._log.flush()
            self._records[rec.call_id] = rec
            self._order.append(rec.call_id)
            self._index.add(rec.call_id, record_tokens(rec))

    def get(self, call_id: str) -> Optional[CallRecord]:
        with self._lock:
            return self._records.get(call_id)

    def count(self) -> int:
        with self._lock:
            return len(self._records)

    def all_records(self) -> list[CallRecord]:
        with self._lock:
            return [self._records[cid] for cid in self._order]

    def search(self, q: Query) -> SearchResult:
        with self._lock:
            if q.terms:
                ids = self._index.candidates(q.terms) or set()
                pool = [self._records[cid] for cid in self._order if cid in ids]
            else:
                pool = [self._records[cid] for cid in self._order]
        matches = [rec for rec in pool if record_matches(rec, q)]
        matches.sort(key=lambda r: (-r.ended_utc_ms, r.call_id))
        aggs = aggregate(matches, q.aggregations)
        start = q.page * q.limit
        return SearchResult(
            hits=matches[start:start + q.limit],
            total=len(matches),
            aggregations=aggs,
            page=q.page,
            limit=q.limit,
        )
