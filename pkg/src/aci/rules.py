"""Business rules over each call's event stream: matches, sequences, counts,
absences, and windowed aggregates, with an additive clamped risk score.

Evaluation is event-time (ts_ms) and happens at event arrival, so a batch
replay fires rules identically to a real-time run.  Absence windows finalize
lazily: at the first event proving the window elapsed, or at call end.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Optional

from .events import (
    EVENT_TYPES,
    SEVERITIES,
    CallEvent,
    EntityExtracted,
    IntentMatched,
    Payload,
    RiskScoreUpdated,
    RuleTriggered,
    Speaker,
    numeric_value,
)

MAX_RISK = 100

# entity types whose normalized values admit ordering comparisons
NUMERIC_ENTITY_TYPES = frozenset({"NUMBER", "MONEY", "DURATION", "PERCENT", "QUANTITY", "VOLUME"})

_OPS: dict[str, Callable[[Decimal, Decimal], bool]] = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "=": lambda a, b: a == b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


class RuleSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class EventPredicate:
    event_type: Optional[str] = None
    intent_id: Optional[str] = None
    entity_type: Optional[str] = None
    rule_id: Optional[str] = None
    speaker: Optional[Speaker] = None
    value_op: Optional[str] = None
    value_const: Optional[Decimal] = None

    def matches(self, e: CallEvent) -> bool:
        if self.event_type is not None and e.type != self.event_type:
            return False
        if self.intent_id is not None:
            if not isinstance(e.payload, IntentMatched) or e.payload.intent.intent_id != self.intent_id:
                return False
        if self.entity_type is not None:
            if not isinstance(e.payload, EntityExtracted) or e.payload.entity.type != self.entity_type:
                return False
        if self.rule_id is not None:
            if not isinstance(e.payload, RuleTriggered) or e.payload.rule_id != self.rule_id:
                return False
        if self.speaker is not None and e.speaker != self.speaker:
            return False
        if self.value_op is not None:
            if not isinstance(e.payload, EntityExtracted):
                return False
            v = numeric_value(e.payload.entity.value)
            if v is None:
                return False
            assert self.value_const is not None
            return _OPS[self.value_op](v, self.value_const)
        return True

    def describe(self) -> str:
        if self.intent_id is not None:
            base = f"intent({self.intent_id})"
        elif self.entity_type is not None:
            base = f"entity({self.entity_type})"
        elif self.rule_id is not None:
            base = f"rule({self.rule_id})"
        else:
            base = f"event({self.event_type})"
        if self.speaker is not None:
            base += f" by {self.speaker.value}"
        if self.value_op is not None:
            base += f" {self.value_op} {self.value_const}"
        return base


@dataclass(frozen=True)
class MatchExpr:
    pred: EventPredicate


@dataclass(frozen=True)
class SequenceExpr:
    first: EventPredicate
    then: EventPredicate
    window_ms: int


@dataclass(frozen=True)
class CountExpr:
    pred: EventPredicate
    at_least: int
    window_ms: int


@dataclass(frozen=True)
class AbsenceExpr:
    pred: EventPredicate
    window_ms: int
    anchor: Optional[EventPredicate] = None  # None anchors at call start


@dataclass(frozen=True)
class AggregateExpr:
    agg: str  # "sum" | "max"
    value_type: str
    pred: EventPredicate
    op: str
    const: Decimal
    window_ms: int


RuleExpr = (MatchExpr, SequenceExpr, CountExpr, AbsenceExpr, AggregateExpr)


@dataclass(frozen=True)
class Rule:
    rule_id: str
    expr: object
    severity: str = "INFO"
    risk_delta: int = 0
    once_per_call: bool = True

    def __post_init__(self) -> None:
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if self.risk_delta < 0:
            raise ValueError("risk_delta must be >= 0")

    def describe(self) -> str:
        x = self.expr
        if isinstance(x, MatchExpr):
            return x.pred.describe()
        if isinstance(x, SequenceExpr):
            return f"{x.first.describe()} then {x.then.describe()} within {x.window_ms // 1000}s"
        if isinstance(x, CountExpr):
            return f"count {x.pred.describe()} >= {x.at_least} within {x.window_ms // 1000}s"
        if isinstance(x, AbsenceExpr):
            anchor = x.anchor.describe() if x.anchor else "call_start"
            return f"absence {x.pred.describe()} within {x.window_ms // 1000}s of {anchor}"
        if isinstance(x, AggregateExpr):
            return (
                f"{x.agg} entity({x.value_type}) over {x.pred.describe()} "
                f"{x.op} {x.const} within {x.window_ms // 1000}s"
            )
        raise TypeError(f"unknown expr {x!r}")


# --- DSL parsing ----------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?s?)|(?P<op>>=|<=|=|<|>)|(?P<sym>[():])|(?P<word>[A-Za-z_][\w.-]*))"
)


def _tokenize(text: str) -> list[str]:
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip():
                raise RuleSyntaxError(f"unexpected character {text[pos]!r} at column {pos + 1}")
            break
        tokens.append(m.group(m.lastgroup))
        pos = m.end()
    return tokens


class _Cursor:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise RuleSyntaxError("unexpected end of rule")
        self.i += 1
        return tok

    def expect(self, want: str) -> None:
        tok = self.next()
        if tok != want:
            raise RuleSyntaxError(f"expected {want!r}, got {tok!r}")

    def done(self) -> bool:
        return self.i >= len(self.tokens)


def _parse_basic_pred(cur: _Cursor, intents: frozenset[str], entity_types: frozenset[str]) -> EventPredicate:
    kind = cur.next()
    cur.expect("(")
    arg = cur.next()
    cur.expect(")")
    if kind == "intent":
        if arg not in intents:
            raise RuleSyntaxError(f"unknown intent {arg!r}")
        pred = EventPredicate(event_type="intent_matched", intent_id=arg)
    elif kind == "entity":
        if arg not in entity_types:
            raise RuleSyntaxError(f"unknown entity type {arg!r}")
        pred = EventPredicate(event_type="entity_extracted", entity_type=arg)
    elif kind == "rule":
        pred = EventPredicate(event_type="rule_triggered", rule_id=arg)
    elif kind == "event":
        if arg not in EVENT_TYPES:
            raise RuleSyntaxError(f"unknown event type {arg!r}")
        pred = EventPredicate(event_type=arg)
    else:
        raise RuleSyntaxError(f"expected a predicate, got {kind!r}")
    if cur.peek() == "by":
        cur.next()
        spk = cur.next()
        try:
            pred = dataclasses.replace(pred, speaker=Speaker(spk))
        except ValueError:
            raise RuleSyntaxError(f"unknown speaker {spk!r}") from None
    return pred


def _parse_pred(cur: _Cursor, intents: frozenset[str], entity_types: frozenset[str],
                allow_cmp: bool = True) -> EventPredicate:
    pred = _parse_basic_pred(cur, intents, entity_types)
    if allow_cmp and cur.peek() in _OPS:
        if pred.entity_type is None:
            raise RuleSyntaxError("value comparisons apply to entity predicates only")
        if pred.entity_type not in NUMERIC_ENTITY_TYPES:
            raise RuleSyntaxError(f"entity type {pred.entity_type} has no numeric value")
        op = cur.next()
        const = _parse_decimal(cur.next())
        pred = dataclasses.replace(pred, value_op=op, value_const=const)
    return pred


def _parse_decimal(tok: str) -> Decimal:
    try:
        return Decimal(tok)
    except ArithmeticError:
        raise RuleSyntaxError(f"expected a number, got {tok!r}") from None


def _parse_window(cur: _Cursor) -> int:
    cur.expect("within")
    tok = cur.next()
    if not tok.endswith("s"):
        raise RuleSyntaxError(f"expected a window like '60s', got {tok!r}")
    try:
        seconds = Decimal(tok[:-1])
    except ArithmeticError:
        raise RuleSyntaxError(f"bad window {tok!r}") from None
    if seconds <= 0:
        raise RuleSyntaxError("window must be positive")
    return int(seconds * 1000)


def parse_rule(source: str, intents: frozenset[str] = frozenset(),
               entity_types: frozenset[str] = frozenset()) -> Rule:
    """Parse one rule line; intent/entity references are checked against the
    provided definitions."""
    cur = _Cursor(_tokenize(source.strip()))
    cur.expect("rule")
    rule_id = cur.next()
    cur.expect(":")
    head = cur.peek()
    if head == "sequence":
        cur.next()
        first = _parse_pred(cur, intents, entity_types)
        cur.expect("then")
        then = _parse_pred(cur, intents, entity_types)
        expr: object = SequenceExpr(first, then, _parse_window(cur))
    elif head == "count":
        cur.next()
        pred = _parse_pred(cur, intents, entity_types, allow_cmp=False)
        cur.expect(">=")
        n = cur.next()
        if not n.isdigit() or int(n) < 1:
            raise RuleSyntaxError(f"count threshold must be a positive integer, got {n!r}")
        expr = CountExpr(pred, int(n), _parse_window(cur))
    elif head == "absence":
        cur.next()
        pred = _parse_pred(cur, intents, entity_types)
        window = _parse_window(cur)
        cur.expect("of")
        if cur.peek() == "call_start":
            cur.next()
            anchor = None
        else:
            anchor = _parse_pred(cur, intents, entity_types)
        expr = AbsenceExpr(pred, window, anchor)
    elif head in ("sum", "max"):
        agg = cur.next()
        cur.expect("entity")
        cur.expect("(")
        value_type = cur.next()
        cur.expect(")")
        if value_type not in NUMERIC_ENTITY_TYPES:
            raise RuleSyntaxError(f"entity type {value_type} has no numeric value")
        cur.expect("over")
        pred = _parse_pred(cur, intents, entity_types, allow_cmp=False)
        op = cur.next()
        if op not in _OPS:
            raise RuleSyntaxError(f"expected a comparison, got {op!r}")
        const = _parse_decimal(cur.next())
        expr = AggregateExpr(agg, value_type, pred, op, const, _parse_window(cur))
    else:
        expr = MatchExpr(_parse_pred(cur, intents, entity_types))

    severity, risk, once = "INFO", 0, True
    while not cur.done():
        tok = cur.next()
        if tok == "severity":
            severity = cur.next()
            if severity not in SEVERITIES:
                raise RuleSyntaxError(f"unknown severity {severity!r}")
        elif tok == "risk":
            n = cur.next()
            if not n.isdigit():
                raise RuleSyntaxError(f"risk must be a non-negative integer, got {n!r}")
            risk = int(n)
        elif tok == "repeatable":
            once = False
        else:
            raise RuleSyntaxError(f"unexpected trailing token {tok!r}")
    return Rule(rule_id=rule_id, expr=expr, severity=severity, risk_delta=risk, once_per_call=once)


def parse_rules(source: str, intents: frozenset[str] = frozenset(),
                entity_types: frozenset[str] = frozenset()) -> list[Rule]:
    rules = []
    for lineno, line in enumerate(source.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rules.append(parse_rule(line, intents, entity_types))
        except RuleSyntaxError as exc:
            raise RuleSyntaxError(f"line {lineno}: {exc}") from None
    seen = set()
    for r in rules:
        if r.rule_id in seen:
            raise RuleSyntaxError(f"duplicate rule id {r.rule_id}")
        seen.add(r.rule_id)
    return rules


def load_rules_dir(path: str | Path, intents: frozenset[str] = frozenset(),
                   entity_types: frozenset[str] = frozenset()) -> list[Rule]:
    rules: list[Rule] = []
    for f in sorted(Path(path).glob("*.rules")):
        rules.extend(parse_rules(f.read_text(encoding="utf-8"), intents, entity_types))
    seen = set()
    for r in rules:
        if r.rule_id in seen:
            raise RuleSyntaxError(f"duplicate rule id {r.rule_id}")
        seen.add(r.rule_id)
    return rules


# --- evaluation state -------------------------------------------------------

@dataclass
class _RuleRuntime:
    fire_count: int = 0
    seq_firsts: list[int] = field(default_factory=list)      # ts of buffered first-events
    count_hits: list[int] = field(default_factory=list)      # ts of pred hits
    absence_open: list[int] = field(default_factory=list)    # anchor ts of open windows
    agg_samples: list[tuple[int, Decimal]] = field(default_factory=list)
    agg_satisfied: bool = False


def _event_values(e: CallEvent, value_type: str) -> list[Decimal]:
    """Numeric samples a single event contributes to an aggregate."""
    if isinstance(e.payload, EntityExtracted) and e.payload.entity.type == value_type:
        v = numeric_value(e.payload.entity.value)
        return [v] if v is not None else []
    if isinstance(e.payload, IntentMatched):
        out = []
        for name in sorted(e.payload.intent.bindings):
            ent = e.payload.intent.bindings[name]
            if ent.type == value_type:
                v = numeric_value(ent.value)
                if v is not None:
                    out.append(v)
        return out
    return []


class RuleState:
    """Windowed evaluation state for one call."""

    def __init__(self, rules: list[Rule]):
        self.rules = rules
        self.risk = 0
        self._rt = {r.rule_id: _RuleRuntime() for r in rules}

    def fired_rules(self) -> list[str]:
        return [r.rule_id for r in self.rules if self._rt[r.rule_id].fire_count > 0]

    def risk_score(self) -> int:
        return self.risk

    def _fire(self, rule: Rule, cascade_fired: set[str], out: list[Payload], detail: str) -> None:
        rt = self._rt[rule.rule_id]
        if rule.once_per_call and rt.fire_count > 0:
            return
        if rule.rule_id in cascade_fired:
            return  # one firing per rule per cascade keeps feedback loops finite
        cascade_fired.add(rule.rule_id)
        rt.fire_count += 1
        self.risk = min(MAX_RISK, self.risk + rule.risk_delta)
        out.append(RuleTriggered(rule_id=rule.rule_id, severity=rule.severity, detail=detail))

    def _evaluate_single(self, e: CallEvent, cascade_fired: set[str]) -> list[Payload]:
        now = e.ts_ms
        out: list[Payload] = []
        ended = e.type == "call_ended"
        for rule in self.rules:
            rt = self._rt[rule.rule_id]
            x = rule.expr
            if isinstance(x, MatchExpr):
                if x.pred.matches(e):
                    self._fire(rule, cascade_fired, out, f"matched {rule.describe()}")
            elif isinstance(x, SequenceExpr):
                rt.seq_firsts = [t for t in rt.seq_firsts if now - t <= x.window_ms]
                if x.then.matches(e) and rt.seq_firsts:
                    self._fire(rule, cascade_fired, out, f"completed {rule.describe()}")
                    rt.seq_firsts = []
                if x.first.matches(e):
                    rt.seq_firsts.append(now)
            elif isinstance(x, CountExpr):
                rt.count_hits = [t for t in rt.count_hits if now - t <= x.window_ms]
                if x.pred.matches(e):
                    rt.count_hits.append(now)
                    if len(rt.count_hits) >= x.at_least:
                        self._fire(rule, cascade_fired, out,
                                   f"reached {rule.describe()}")
                        rt.count_hits = []
            elif isinstance(x, AbsenceExpr):
                elapsed = [t for t in rt.absence_open if now > t + x.window_ms]
                if elapsed or (ended and rt.absence_open):
                    self._fire(rule, cascade_fired, out, f"violated {rule.describe()}")
                    if ended:
                        rt.absence_open = []
                    else:
                        rt.absence_open = [t for t in rt.absence_open if now <= t + x.window_ms]
                if x.pred.matches(e):
                    rt.absence_open = []
                if (x.anchor is None and e.type == "call_started") or (
                    x.anchor is not None and x.anchor.matches(e)
                ):
                    rt.absence_open.append(now)
            elif isinstance(x, AggregateExpr):
                rt.agg_samples = [(t, v) for t, v in rt.agg_samples if now - t <= x.window_ms]
                if x.pred.matches(e):
                    for v in _event_values(e, x.value_type):
                        rt.agg_samples.append((now, v))
                if rt.agg_samples:
                    values = [v for _, v in rt.agg_samples]
                    agg = sum(values) if x.agg == "sum" else max(values)
                    satisfied = _OPS[x.op](agg, x.const)
                else:
                    satisfied = False
                if satisfied and not rt.agg_satisfied:
                    self._fire(rule, cascade_fired, out, f"satisfied {rule.describe()}")
                rt.agg_satisfied = satisfied
        return out

    def evaluate(self, e: CallEvent, make_event: Callable[[Payload], CallEvent]) -> list[CallEvent]:
        """Process one event; returns the trigger/risk events it produced.

        Trigger events are fed back through the rules (rule(...) predicates
        may chain), with at most one firing per rule per cascade.
        """
        risk_before = self.risk
        cascade_fired: set[str] = set()
        queue: list[CallEvent] = [e]
        produced: list[CallEvent] = []
        while queue:
            cur = queue.pop(0)
            for payload in self._evaluate_single(cur, cascade_fired):
                ev = make_event(payload)
                produced.append(ev)
                queue.append(ev)
        if self.risk != risk_before:
            produced.append(make_event(RiskScoreUpdated(self.risk)))
        return produced
