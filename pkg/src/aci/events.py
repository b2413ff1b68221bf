"""Canonical event model: per-call ordering, validation, and the JSON-lines codec.

Every other part of the system produces or consumes ``CallEvent`` values.  The
encoding is canonical (fixed field order, no extra whitespace) so that the same
event always serializes to the same bytes, on disk and on the wire.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Any, Optional, Union

WIRE_VERSION = 1


class Speaker(str, Enum):
    AGENT = "agent"
    CUSTOMER = "customer"


SEVERITIES = ("INFO", "WARN", "CRITICAL")


class DecodeError(ValueError):
    """Raised when a wire line cannot be decoded into a valid event."""


@dataclass(frozen=True)
class Word:
    """One recognized word: timed, speaker-labeled, confidence-scored."""

    call_id: str
    seq: int
    text: str
    start_ms: int
    end_ms: int
    speaker: Speaker
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not self.call_id:
            raise ValueError("word call_id must be non-empty")
        if self.seq < 0:
            raise ValueError("word seq must be non-negative")
        if not self.text or any(c.isspace() for c in self.text):
            raise ValueError("word text must be non-empty and whitespace-free")
        if self.end_ms < self.start_ms:
            raise ValueError("word end_ms must be >= start_ms")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("word confidence must be in [0,1]")


@dataclass(frozen=True)
class Utterance:
    """A maximal single-speaker word run with its refined (display) text."""

    speaker: Speaker
    words: tuple[Word, ...]
    refined_text: str
    start_ms: int
    end_ms: int

    def __post_init__(self) -> None:
        if not self.words:
            raise ValueError("utterance must contain at least one word")
        if any(w.speaker != self.speaker for w in self.words):
            raise ValueError("utterance words must share one speaker")
        seqs = [w.seq for w in self.words]
        if seqs != sorted(seqs) or len(set(seqs)) != len(seqs):
            raise ValueError("utterance words must be ordered by seq")
        if self.start_ms != self.words[0].start_ms or self.end_ms != self.words[-1].end_ms:
            raise ValueError("utterance bounds must match first/last word")

    @classmethod
    def from_words(cls, words: list[Word] | tuple[Word, ...], refined_text: str) -> "Utterance":
        ws = tuple(words)
        return cls(
            speaker=ws[0].speaker,
            words=ws,
            refined_text=refined_text,
            start_ms=ws[0].start_ms,
            end_ms=ws[-1].end_ms,
        )


# --- normalized entity values -------------------------------------------------

@dataclass(frozen=True)
class IntegerValue:
    kind = "integer"
    value: int


@dataclass(frozen=True)
class DecimalValue:
    kind = "decimal"
    value: Decimal


@dataclass(frozen=True)
class MoneyValue:
    kind = "money"
    amount_minor: int
    currency: str  # ISO-4217


@dataclass(frozen=True)
class DateValue:
    kind = "date"
    iso: str  # ISO-8601 calendar date


@dataclass(frozen=True)
class DurationValue:
    kind = "duration"
    seconds: int


@dataclass(frozen=True)
class PercentValue:
    kind = "percent"
    value: Decimal


@dataclass(frozen=True)
class SpelledValue:
    kind = "spelled"
    text: str


@dataclass(frozen=True)
class GazetteerValue:
    kind = "gazetteer"
    canonical: str


@dataclass(frozen=True)
class QuantityValue:
    kind = "quantity"
    value: Decimal
    unit: str


EntityValue = Union[
    IntegerValue,
    DecimalValue,
    MoneyValue,
    DateValue,
    DurationValue,
    PercentValue,
    SpelledValue,
    GazetteerValue,
    QuantityValue,
]


def numeric_value(value: EntityValue) -> Optional[Decimal]:
    """Comparable magnitude of a normalized value, or None for non-numeric kinds.

    Money compares in minor units; durations in seconds.
    """
    if isinstance(value, IntegerValue):
        return Decimal(value.value)
    if isinstance(value, DecimalValue):
        return value.value
    if isinstance(value, MoneyValue):
        return Decimal(value.amount_minor)
    if isinstance(value, DurationValue):
        return Decimal(value.seconds)
    if isinstance(value, (PercentValue, QuantityValue)):
        return value.value
    return None


@dataclass(frozen=True)
class EntityMatch:
    """A transcript span recognized as an entity plus its normalized value."""

    type: str
    speaker: Speaker
    first_seq: int
    last_seq: int
    raw_text: str
    value: EntityValue

    def __post_init__(self) -> None:
        if self.last_seq < self.first_seq:
            raise ValueError("entity span must be non-empty")


@dataclass(frozen=True)
class IntentMatch:
    intent_id: str
    speaker: Speaker
    first_seq: int
    last_seq: int
    score: float
    pattern_index: int
    bindings: dict[str, EntityMatch] = field(default_factory=dict)


# --- event payloads -----------------------------------------------------------

@dataclass(frozen=True)
class CallStarted:
    type = "call_started"
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class WordRecognized:
    type = "word_recognized"
    word: Word


@dataclass(frozen=True)
class UtteranceFinalized:
    type = "utterance_finalized"
    utterance: Utterance


@dataclass(frozen=True)
class EntityExtracted:
    type = "entity_extracted"
    entity: EntityMatch


@dataclass(frozen=True)
class IntentMatched:
    type = "intent_matched"
    intent: IntentMatch


@dataclass(frozen=True)
class RuleTriggered:
    type = "rule_triggered"
    rule_id: str
    severity: str
    detail: str

    def __post_init__(self) -> None:
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")


@dataclass(frozen=True)
class RiskScoreUpdated:
    type = "risk_score_updated"
    score: int

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 100:
            raise ValueError("risk score must be in [0,100]")


@dataclass(frozen=True)
class SupervisorAction:
    type = "supervisor_action"
    action: str
    actor: str
    note: str = ""


@dataclass(frozen=True)
class CallEnded:
    type = "call_ended"


Payload = Union[
    CallStarted,
    WordRecognized,
    UtteranceFinalized,
    EntityExtracted,
    IntentMatched,
    RuleTriggered,
    RiskScoreUpdated,
    SupervisorAction,
    CallEnded,
]

EVENT_TYPES = (
    "call_started",
    "word_recognized",
    "utterance_finalized",
    "entity_extracted",
    "intent_matched",
    "rule_triggered",
    "risk_score_updated",
    "supervisor_action",
    "call_ended",
)


@dataclass(frozen=True)
class CallEvent:
    call_id: str
    global_seq: int
    ts_ms: int
    payload: Payload

    @property
    def type(self) -> str:
        return self.payload.type

    @property
    def speaker(self) -> Optional[Speaker]:
        """Speaker the event is attributable to, when it carries one."""
        p = self.payload
        if isinstance(p, WordRecognized):
            return p.word.speaker
        if isinstance(p, UtteranceFinalized):
            return p.utterance.speaker
        if isinstance(p, EntityExtracted):
            return p.entity.speaker
        if isinstance(p, IntentMatched):
            return p.intent.speaker
        return None


# --- stream validation --------------------------------------------------------

@dataclass(frozen=True)
class StreamViolation:
    call_id: str
    index: int  # position in the submitted list
    reason: str


def validate_stream(events: list[CallEvent]) -> Optional[StreamViolation]:
    """Check per-call ordering, seq density, and lifecycle invariants.

    Events of several calls may be interleaved in one list; each call's
    subsequence is validated independently.  Returns the first violation in
    list order, or None when every call is well-formed.
    """
    per_call: dict[str, dict[str, Any]] = {}
    for i, e in enumerate(events):
        st = per_call.get(e.call_id)
        if st is None:
            st = per_call[e.call_id] = {"next_seq": 0, "last_ts": None, "ended": False, "started": False}
            if e.type != "call_started":
                return StreamViolation(e.call_id, i, "CallStarted not first")
            st["started"] = True
        if st["ended"]:
            return StreamViolation(e.call_id, i, "event after CallEnded")
        if e.global_seq != st["next_seq"]:
            return StreamViolation(e.call_id, i, f"seq gap at {st['next_seq']}")
        st["next_seq"] += 1
        if st["last_ts"] is not None and e.ts_ms < st["last_ts"]:
            return StreamViolation(e.call_id, i, f"ts_ms regression at seq {e.global_seq}")
        st["last_ts"] = e.ts_ms
        if e.type == "call_started" and e.global_seq != 0:
            return StreamViolation(e.call_id, i, "CallStarted not first")
        if e.type == "call_ended":
            st["ended"] = True
    for call_id, st in per_call.items():
        if not st["ended"]:
            idx = max(i for i, e in enumerate(events) if e.call_id == call_id)
            return StreamViolation(call_id, idx, "CallEnded not last")
    return None


# --- canonical JSON codec -----------------------------------------------------

def _dump(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _word_obj(w: Word) -> dict[str, Any]:
    return {
        "seq": w.seq,
        "text": w.text,
        "start_ms": w.start_ms,
        "end_ms": w.end_ms,
        "speaker": w.speaker.value,
        "confidence": w.confidence,
    }


def _value_obj(v: EntityValue) -> dict[str, Any]:
    if isinstance(v, IntegerValue):
        return {"kind": "integer", "value": v.value}
    if isinstance(v, DecimalValue):
        return {"kind": "decimal", "value": str(v.value)}
    if isinstance(v, MoneyValue):
        return {"kind": "money", "amount_minor": v.amount_minor, "currency": v.currency}
    if isinstance(v, DateValue):
        return {"kind": "date", "iso": v.iso}
    if isinstance(v, DurationValue):
        return {"kind": "duration", "seconds": v.seconds}
    if isinstance(v, PercentValue):
        return {"kind": "percent", "value": str(v.value)}
    if isinstance(v, SpelledValue):
        return {"kind": "spelled", "text": v.text}
    if isinstance(v, GazetteerValue):
        return {"kind": "gazetteer", "canonical": v.canonical}
    if isinstance(v, QuantityValue):
        return {"kind": "quantity", "value": str(v.value), "unit": v.unit}
    raise TypeError(f"unknown entity value {v!r}")


def _entity_obj(m: EntityMatch) -> dict[str, Any]:
    return {
        "type": m.type,
        "speaker": m.speaker.value,
        "first_seq": m.first_seq,
        "last_seq": m.last_seq,
        "raw_text": m.raw_text,
        "value": _value_obj(m.value),
    }


def _intent_obj(m: IntentMatch) -> dict[str, Any]:
    return {
        "id": m.intent_id,
        "speaker": m.speaker.value,
        "first_seq": m.first_seq,
        "last_seq": m.last_seq,
        "score": m.score,
        "pattern_index": m.pattern_index,
        "bindings": {k: _entity_obj(m.bindings[k]) for k in sorted(m.bindings)},
    }


def _utterance_obj(u: Utterance) -> dict[str, Any]:
    return {
        "speaker": u.speaker.value,
        "refined_text": u.refined_text,
        "start_ms": u.start_ms,
        "end_ms": u.end_ms,
        "words": [_word_obj(w) for w in u.words],
    }


def encode_event(e: CallEvent) -> str:
    """Encode an event as one line of canonical JSON (no trailing newline)."""
    obj: dict[str, Any] = {
        "v": WIRE_VERSION,
        "type": e.type,
        "call_id": e.call_id,
        "seq": e.global_seq,
        "ts_ms": e.ts_ms,
    }
    p = e.payload
    if isinstance(p, CallStarted):
        obj["metadata"] = {k: p.metadata[k] for k in sorted(p.metadata)}
    elif isinstance(p, WordRecognized):
        obj["word"] = _word_obj(p.word)
    elif isinstance(p, UtteranceFinalized):
        obj["utterance"] = _utterance_obj(p.utterance)
    elif isinstance(p, EntityExtracted):
        obj["entity"] = _entity_obj(p.entity)
    elif isinstance(p, IntentMatched):
        obj["intent"] = _intent_obj(p.intent)
    elif isinstance(p, RuleTriggered):
        obj["rule_id"] = p.rule_id
        obj["severity"] = p.severity
        obj["detail"] = p.detail
    elif isinstance(p, RiskScoreUpdated):
        obj["score"] = p.score
    elif isinstance(p, SupervisorAction):
        obj["action"] = p.action
        obj["actor"] = p.actor
        obj["note"] = p.note
    elif isinstance(p, CallEnded):
        pass
    else:
        raise TypeError(f"unknown payload {p!r}")
    return _dump(obj)


def _req(obj: dict[str, Any], key: str, types) -> Any:
    if key not in obj:
        raise DecodeError(f"missing field {key!r}")
    v = obj[key]
    if not isinstance(v, types) or isinstance(v, bool) and types is not bool:
        raise DecodeError(f"field {key!r} has wrong type")
    return v


def _decode_speaker(raw: str) -> Speaker:
    try:
        return Speaker(raw)
    except ValueError:
        raise DecodeError(f"unknown speaker {raw!r}") from None


def _decode_word(obj: Any, call_id: str) -> Word:
    if not isinstance(obj, dict):
        raise DecodeError("word must be an object")
    try:
        return Word(
            call_id=call_id,
            seq=_req(obj, "seq", int),
            text=_req(obj, "text", str),
            start_ms=_req(obj, "start_ms", int),
            end_ms=_req(obj, "end_ms", int),
            speaker=_decode_speaker(_req(obj, "speaker", str)),
            confidence=float(_req(obj, "confidence", (int, float))),
        )
    except ValueError as exc:
        raise DecodeError(str(exc)) from None


def _decode_value(obj: Any) -> EntityValue:
    if not isinstance(obj, dict):
        raise DecodeError("value must be an object")
    kind = _req(obj, "kind", str)
    try:
        if kind == "integer":
            return IntegerValue(_req(obj, "value", int))
        if kind == "decimal":
            return DecimalValue(Decimal(_req(obj, "value", str)))
        if kind == "money":
            return MoneyValue(_req(obj, "amount_minor", int), _req(obj, "currency", str))
        if kind == "date":
            return DateValue(_req(obj, "iso", str))
        if kind == "duration":
            return DurationValue(_req(obj, "seconds", int))
        if kind == "percent":
            return PercentValue(Decimal(_req(obj, "value", str)))
        if kind == "spelled":
            return SpelledValue(_req(obj, "text", str))
        if kind == "gazetteer":
            return GazetteerValue(_req(obj, "canonical", str))
        if kind == "quantity":
            return QuantityValue(Decimal(_req(obj, "value", str)), _req(obj, "unit", str))
    except ArithmeticError:
        raise DecodeError(f"bad numeric literal in {kind} value") from None
    raise DecodeError(f"unknown value kind {kind!r}")


def _decode_entity(obj: Any) -> EntityMatch:
    if not isinstance(obj, dict):
        raise DecodeError("entity must be an object")
    try:
        return EntityMatch(
            type=_req(obj, "type", str),
            speaker=_decode_speaker(_req(obj, "speaker", str)),
            first_seq=_req(obj, "first_seq", int),
            last_seq=_req(obj, "last_seq", int),
            raw_text=_req(obj, "raw_text", str),
            value=_decode_value(_req(obj, "value", dict)),
        )
    except ValueError as exc:
        raise DecodeError(str(exc)) from None


def _decode_intent(obj: Any) -> IntentMatch:
    if not isinstance(obj, dict):
        raise DecodeError("intent must be an object")
    bindings_obj = _req(obj, "bindings", dict)
    bindings = {str(k): _decode_entity(v) for k, v in bindings_obj.items()}
    return IntentMatch(
        intent_id=_req(obj, "id", str),
        speaker=_decode_speaker(_req(obj, "speaker", str)),
        first_seq=_req(obj, "first_seq", int),
        last_seq=_req(obj, "last_seq", int),
        score=float(_req(obj, "score", (int, float))),
        pattern_index=_req(obj, "pattern_index", int),
        bindings=bindings,
    )


def _decode_utterance(obj: Any, call_id: str) -> Utterance:
    if not isinstance(obj, dict):
        raise DecodeError("utterance must be an object")
    words = _req(obj, "words", list)
    try:
        return Utterance(
            speaker=_decode_speaker(_req(obj, "speaker", str)),
            words=tuple(_decode_word(w, call_id) for w in words),
            refined_text=_req(obj, "refined_text", str),
            start_ms=_req(obj, "start_ms", int),
            end_ms=_req(obj, "end_ms", int),
        )
    except ValueError as exc:
        raise DecodeError(str(exc)) from None


def decode_event(line: str) -> CallEvent:
    """Decode one canonical JSON line back into a CallEvent.

    Rejects unknown type tags, missing required fields, and out-of-range
    values with DecodeError.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise DecodeError("event must be a JSON object")
    if obj.get("v") != WIRE_VERSION:
        raise DecodeError(f"unsupported wire version {obj.get('v')!r}")
    etype = _req(obj, "type", str)
    call_id = _req(obj, "call_id", str)
    seq = _req(obj, "seq", int)
    ts_ms = _req(obj, "ts_ms", int)

    payload: Payload
    if etype == "call_started":
        md = _req(obj, "metadata", dict)
        payload = CallStarted(metadata={str(k): str(v) for k, v in md.items()})
    elif etype == "word_recognized":
        payload = WordRecognized(_decode_word(_req(obj, "word", dict), call_id))
    elif etype == "utterance_finalized":
        payload = UtteranceFinalized(_decode_utterance(_req(obj, "utterance", dict), call_id))
    elif etype == "entity_extracted":
        payload = EntityExtracted(_decode_entity(_req(obj, "entity", dict)))
    elif etype == "intent_matched":
        payload = IntentMatched(_decode_intent(_req(obj, "intent", dict)))
    elif etype == "rule_triggered":
        try:
            payload = RuleTriggered(
                rule_id=_req(obj, "rule_id", str),
                severity=_req(obj, "severity", str),
                detail=_req(obj, "detail", str),
            )
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
    elif etype == "risk_score_updated":
        try:
            payload = RiskScoreUpdated(score=_req(obj, "score", int))
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
    elif etype == "supervisor_action":
        payload = SupervisorAction(
            action=_req(obj, "action", str),
            actor=_req(obj, "actor", str),
            note=_req(obj, "note", str),
        )
    elif etype == "call_ended":
        payload = CallEnded()
    else:
        raise DecodeError(f"unknown type {etype!r}")
    if seq < 0:
        raise DecodeError("seq must be non-negative")
    return CallEvent(call_id=call_id, global_seq=seq, ts_ms=ts_ms, payload=payload)
