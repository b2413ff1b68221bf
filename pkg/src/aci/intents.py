"""Phrase-grammar intents: compilation, fuzzy DP alignment, and stream scanning.

The aligner is a dynamic program over (pattern token, window word) cells.
Exact literal and synonym hits are free; near-miss literals pay their
normalized character edit distance when it stays at or below
``CHAR_EDIT_DISCOUNT_MAX`` (recovery from recognizer errors); anything else
costs one unit, as do insertions and deletions.  The score normalizes total
cost by non-optional pattern length, so optional tokens never penalize.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Optional, Union

from .entities import SYSTEM_ENTITY_TYPES
from .events import EntityMatch, IntentMatch, Speaker, Utterance, Word

CHAR_EDIT_DISCOUNT_MAX = 0.34
DEFAULT_THRESHOLD = 0.8
# An entity slot may consume this many window words when no entity span says otherwise.
_SLOT_MAX_WORDS = 5
_INF = float("inf")


# --- pattern tokens -----------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    word: str


@dataclass(frozen=True)
class Alternation:
    alts: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class EntitySlot:
    entity_type: str
    name: str


@dataclass(frozen=True)
class Gap:
    max_skip: int

    def __post_init__(self) -> None:
        if self.max_skip < 1:
            raise ValueError("gap max_skip must be >= 1")


@dataclass(frozen=True)
class OptionalTok:
    inner: Union[Literal, Alternation, EntitySlot]


PatternToken = Union[Literal, Alternation, EntitySlot, Gap, OptionalTok]
Pattern = tuple[PatternToken, ...]


@dataclass(frozen=True)
class IntentDef:
    intent_id: str
    display_name: str
    category: str
    patterns: tuple[Pattern, ...]
    negative_patterns: tuple[tuple[str, ...], ...] = ()
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not self.patterns:
            raise ValueError("intent must define at least one pattern")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0,1]")
        for p in self.patterns:
            if non_optional_length(p) == 0:
                raise ValueError("pattern must contain a non-optional token")


def non_optional_length(pattern: Pattern) -> int:
    return sum(1 for t in pattern if not isinstance(t, OptionalTok))


def required_slots(pattern: Pattern) -> list[EntitySlot]:
    return [t for t in pattern if isinstance(t, EntitySlot)]


def _max_consumption(tok: PatternToken) -> int:
    if isinstance(tok, Literal):
        return 1
    if isinstance(tok, Alternation):
        return max(len(a) for a in tok.alts)
    if isinstance(tok, EntitySlot):
        return _SLOT_MAX_WORDS
    if isinstance(tok, Gap):
        return tok.max_skip
    return _max_consumption(tok.inner)


@lru_cache(maxsize=4096)
def window_cap(pattern: Pattern) -> int:
    """Largest window the aligner accepts for this pattern.

    For plain word patterns this is pattern length plus
    max(2, floor(length/4)); gaps, slots, and multiword synonym forms widen
    it by their own maximum consumption.
    """
    slack = max(2, len(pattern) // 4)
    return sum(_max_consumption(t) for t in pattern) + slack


@lru_cache(maxsize=4096)
def window_length_bounds(pattern: Pattern, threshold: float) -> tuple[int, int]:
    """Window lengths that could possibly reach the threshold.

    Shorter windows force at least (hard tokens - length) deletions; longer
    ones force (length - max consumption) insertions.  Both bounds are exact,
    so scanning only this range never drops a qualifying match.
    """
    plen_total = non_optional_length(pattern)
    plen_hard = sum(
        1 for t in pattern if not isinstance(t, (OptionalTok, Gap))
    )
    maxcons = sum(_max_consumption(t) for t in pattern)
    allowed_cost = plen_total * (1.0 - threshold) + 1e-9
    lo = max(1, math.ceil(plen_hard - allowed_cost))
    hi = min(window_cap(pattern), int(maxcons + allowed_cost))
    return lo, hi


# --- fuzzy alignment ----------------------------------------------------------

@lru_cache(maxsize=65536)
def char_edit_ratio(a: str, b: str) -> float:
    """Levenshtein distance normalized by the longer word's length."""
    if a == b:
        return 0.0
    if not a or not b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1] / max(len(a), len(b))


def literal_cost(pattern_word: str, window_word: str) -> float:
    if pattern_word == window_word:
        return 0.0
    d = char_edit_ratio(pattern_word, window_word)
    return d if d <= CHAR_EDIT_DISCOUNT_MAX else 1.0


@dataclass(frozen=True)
class WindowEntity:
    """An extracted entity located inside the alignment window."""

    entity: EntityMatch
    start: int  # first window token index
    end: int    # last window token index (inclusive)


@dataclass(frozen=True)
class Alignment:
    score: float
    cost: float
    bindings: dict[str, EntityMatch]


_LIT, _ALT, _SLOT, _GAP = 0, 1, 2, 3


@lru_cache(maxsize=4096)
def _pattern_plan(pattern: Pattern):
    """Flattened per-token dispatch data: (kind, payload, skip_cost)."""
    plan = []
    has_slots = False
    for tok in pattern:
        optional = isinstance(tok, OptionalTok)
        inner = tok.inner if optional else tok
        if isinstance(inner, Literal):
            kind, data = _LIT, inner.word
        elif isinstance(inner, Alternation):
            kind, data = _ALT, inner.alts
        elif isinstance(inner, EntitySlot):
            kind, data = _SLOT, (inner.entity_type, inner.name)
            has_slots = True
        else:
            kind, data = _GAP, inner.max_skip
        if optional or kind == _GAP:
            skip_cost = 0.0
        elif kind == _SLOT:
            skip_cost = _INF  # a required slot cannot go unfilled
        else:
            skip_cost = 1.0
        plan.append((kind, data, skip_cost))
    return tuple(plan), has_slots


def align_cost(
    pattern: Pattern,
    window: list[str],
    entities: Iterable[WindowEntity] = (),
) -> Optional[tuple[float, dict[str, EntityMatch]]]:
    """Minimum alignment cost of pattern over the whole window, with bindings.

    Returns None when no feasible alignment exists (an unfillable required
    entity slot).  Ties resolve deterministically toward the earliest-found
    transition, favoring matches over gaps over deletions over insertions.
    """
    plan, has_slots = _pattern_plan(pattern)
    P, W = len(plan), len(window)
    ents: list[WindowEntity] = []
    if has_slots and entities:
        ents = sorted(entities, key=lambda we: (we.start, we.end, we.entity.type))
    cost = [[_INF] * (W + 1) for _ in range(P + 1)]
    back = [[None] * (W + 1) for _ in range(P + 1)] if has_slots else None
    row0 = cost[0]
    for j in range(W + 1):
        row0[j] = float(j)
    if back is not None:
        for j in range(1, W + 1):
            back[0][j] = (0, j - 1, None)
    for i in range(1, P + 1):
        kind, data, skip_cost = plan[i - 1]
        above = cost[i - 1]
        row = cost[i]
        brow = back[i] if back is not None else None
        d = above[0] + skip_cost
        if d < _INF:
            row[0] = d
            if brow is not None:
                brow[0] = (i - 1, 0, None)
        for j in range(1, W + 1):
            best, bi, bj, bind = _INF, -1, -1, None
            if kind == _LIT:
                ww = window[j - 1]
                c = above[j - 1] + (0.0 if data == ww else literal_cost(data, ww))
                if c < best:
                    best, bi, bj = c, i - 1, j - 1
            elif kind == _ALT:
                for alt in data:
                    L = len(alt)
                    if L <= j and tuple(window[j - L:j]) == alt:
                        c = above[j - L]
                        if c < best:
                            best, bi, bj = c, i - 1, j - L
                c = above[j - 1] + 1.0
                if c < best:
                    best, bi, bj = c, i - 1, j - 1
            elif kind == _SLOT:
                etype, name = data
                for we in ents:
                    if we.end == j - 1 and we.entity.type == etype:
                        c = above[we.start]
                        if c < best:
                            best, bi, bj, bind = c, i - 1, we.start, (name, we.entity)
            else:  # gap: consume 0..max_skip words free
                m_max = data if data < j else j
                for m in range(m_max + 1):
                    c = above[j - m]
                    if c < best:
                        best, bi, bj = c, i - 1, j - m
            c = above[j] + skip_cost
            if c < best:
                best, bi, bj, bind = c, i - 1, j, None
            c = row[j - 1] + 1.0
            if c < best:
                best, bi, bj, bind = c, i, j - 1, None
            row[j] = best
            if brow is not None and bi >= 0:
                brow[j] = (bi, bj, bind)

    if cost[P][W] == _INF:
        return None
    bindings: dict[str, EntityMatch] = {}
    if back is not None:
        i, j = P, W
        while (i, j) != (0, 0):
            step = back[i][j]
            assert step is not None
            pi, pj, bind = step
            if bind is not None:
                bindings.setdefault(bind[0], bind[1])
            i, j = pi, pj
    return cost[P][W], bindings


def fuzzy_align(
    pattern: Pattern,
    window: list[str],
    entities: Iterable[WindowEntity] = (),
    threshold: float = DEFAULT_THRESHOLD,
) -> Optional[Alignment]:
    """Score pattern against a window; None below threshold or infeasible."""
    if not window or len(window) > window_cap(pattern):
        return None
    result = align_cost(pattern, window, entities)
    if result is None:
        return None
    total_cost, bindings = result
    plen = non_optional_length(pattern)
    score = max(0.0, 1.0 - total_cost / plen)
    if score < threshold:
        return None
    # every required slot must have been consumed through an entity
    for slot in required_slots(pattern):
        if slot.name not in bindings:
            return None
    return Alignment(score=score, cost=total_cost, bindings=bindings)


# --- negative patterns --------------------------------------------------------

def contains_subsequence(tokens: list[str], needle: tuple[str, ...]) -> bool:
    n = len(needle)
    if n == 0 or n > len(tokens):
        return False
    return any(tuple(tokens[i:i + n]) == needle for i in range(len(tokens) - n + 1))


def apply_negative_patterns(matched_tokens: list[str], intent: IntentDef) -> bool:
    """True when the match must be suppressed (false-positive training)."""
    folded = [t.lower() for t in matched_tokens]
    return any(contains_subsequence(folded, neg) for neg in intent.negative_patterns)


# --- grammar compilation ------------------------------------------------------

class IntentSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnknownEntityError(IntentSyntaxError):
    pass


_HEADER_RE = re.compile(
    r'^intent\s+(?P<id>[A-Za-z_][\w.-]*)'
    r'(?:\s+name\s+"(?P<name>[^"]*)")?'
    r'(?:\s+category\s+(?P<cat>[\w.-]+))?'
    r'(?:\s+threshold\s+(?P<thr>[0-9.]+))?'
    r'\s*:\s*(?P<rest>.*)$'
)
_SLOT_RE = re.compile(r"^@(?P<type>[A-Z][A-Z0-9_]*)(?::(?P<name>[a-z][\w]*))?$")
_GAP_RE = re.compile(r"^\*(?P<n>\d+)$")


def _parse_pattern_element(text: str, line: int, col: int, known_types: frozenset[str], used_names: set[str]):
    m = _SLOT_RE.match(text)
    if m:
        etype = m.group("type")
        if etype not in SYSTEM_ENTITY_TYPES and etype not in known_types:
            raise UnknownEntityError(f"unknown entity type @{etype}", line, col)
        name = m.group("name") or etype.lower()
        base, n = name, 2
        while name in used_names:
            name = f"{base}_{n}"
            n += 1
        used_names.add(name)
        return EntitySlot(etype, name)
    m = _GAP_RE.match(text)
    if m:
        n = int(m.group("n"))
        if n < 1:
            raise IntentSyntaxError("gap size must be >= 1", line, col)
        return Gap(n)
    if text.startswith("(") and text.endswith(")"):
        alts = []
        for alt in text[1:-1].split("|"):
            words = tuple(alt.strip().lower().split())
            if not words:
                raise IntentSyntaxError("empty alternation branch", line, col)
            alts.append(words)
        if len(alts) < 2:
            raise IntentSyntaxError("alternation needs at least two branches", line, col)
        return Alternation(tuple(alts))
    if not text or any(c in text for c in "()[]|@*"):
        raise IntentSyntaxError(f"bad pattern token {text!r}", line, col)
    return Literal(text.lower())


def parse_pattern(text: str, line: int, known_types: frozenset[str]) -> Pattern:
    """Parse one quoted pattern body into tokens."""
    tokens: list[PatternToken] = []
    used_names: set[str] = set()
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        col = i + 1
        if text[i] == "(":
            close = text.find(")", i)
            if close < 0:
                raise IntentSyntaxError("unbalanced '('", line, col)
            tokens.append(_parse_pattern_element(text[i:close + 1], line, col, known_types, used_names))
            i = close + 1
        elif text[i] == "[":
            close = text.find("]", i)
            if close < 0:
                raise IntentSyntaxError("unbalanced '['", line, col)
            inner_text = text[i + 1:close].strip()
            inner = _parse_pattern_element(inner_text, line, col, known_types, used_names)
            if isinstance(inner, Gap):
                raise IntentSyntaxError("a gap cannot be optional", line, col)
            tokens.append(OptionalTok(inner))
            i = close + 1
        else:
            j = i
            while j < n and not text[j].isspace():
                j += 1
            tokens.append(_parse_pattern_element(text[i:j], line, col, known_types, used_names))
            i = j
    if not tokens:
        raise IntentSyntaxError("empty pattern", line, 1)
    if all(isinstance(t, OptionalTok) for t in tokens):
        raise IntentSyntaxError("pattern needs at least one non-optional token", line, 1)
    return tuple(tokens)


def _quoted(text: str, line: int) -> list[str]:
    """All double-quoted segments in a line; rejects unbalanced quotes."""
    if text.count('"') % 2 != 0:
        raise IntentSyntaxError("unbalanced quote", line, text.find('"') + 1)
    return re.findall(r'"([^"]*)"', text)


def parse_intents(source: str, user_types: frozenset[str] = frozenset()) -> list[IntentDef]:
    """Parse intent definitions from grammar text (several per source allowed)."""
    defs: list[IntentDef] = []
    current: Optional[dict] = None

    def close(line: int) -> None:
        nonlocal current
        if current is None:
            return
        if not current["patterns"]:
            raise IntentSyntaxError(f"intent {current['id']} has no patterns", line)
        defs.append(
            IntentDef(
                intent_id=current["id"],
                display_name=current["name"],
                category=current["category"],
                patterns=tuple(current["patterns"]),
                negative_patterns=tuple(current["negatives"]),
                threshold=current["threshold"],
            )
        )
        current = None

    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("intent "):
            close(lineno)
            m = _HEADER_RE.match(line)
            if m is None:
                raise IntentSyntaxError("malformed intent header", lineno, 1)
            thr = float(m.group("thr")) if m.group("thr") else DEFAULT_THRESHOLD
            if not 0.0 < thr <= 1.0:
                raise IntentSyntaxError("threshold must be in (0,1]", lineno, 1)
            current = {
                "id": m.group("id"),
                "name": m.group("name") or m.group("id"),
                "category": m.group("cat") or "",
                "threshold": thr,
                "patterns": [],
                "negatives": [],
            }
            for pat in _quoted(m.group("rest"), lineno):
                current["patterns"].append(parse_pattern(pat, lineno, user_types))
        elif line.startswith("!negative"):
            if current is None:
                raise IntentSyntaxError("negative pattern outside an intent", lineno, 1)
            quoted = _quoted(line, lineno)
            if len(quoted) != 1:
                raise IntentSyntaxError("expected one quoted negative pattern", lineno, 1)
            tokens = tuple(quoted[0].lower().split())
            if not tokens:
                raise IntentSyntaxError("empty negative pattern", lineno, 1)
            if tokens not in current["negatives"]:
                current["negatives"].append(tokens)
        elif line.startswith('"'):
            if current is None:
                raise IntentSyntaxError("pattern outside an intent", lineno, 1)
            quoted = _quoted(line, lineno)
            if len(quoted) != 1:
                raise IntentSyntaxError("expected one quoted pattern per line", lineno, 1)
            current["patterns"].append(parse_pattern(quoted[0], lineno, user_types))
        else:
            raise IntentSyntaxError(f"unexpected line {line!r}", lineno, 1)
    close(len(source.splitlines()) + 1)
    if not defs:
        raise IntentSyntaxError("no intent definitions found", 1)
    seen = set()
    for d in defs:
        if d.intent_id in seen:
            raise IntentSyntaxError(f"duplicate intent id {d.intent_id}", 1)
        seen.add(d.intent_id)
    return defs


def compile_intent(source: str, user_types: frozenset[str] = frozenset()) -> IntentDef:
    """Compile a source defining exactly one intent."""
    defs = parse_intents(source, user_types)
    if len(defs) != 1:
        raise IntentSyntaxError(f"expected one intent, found {len(defs)}", 1)
    return defs[0]


def with_negative(intent: IntentDef, tokens: tuple[str, ...]) -> IntentDef:
    """Copy with one more negative pattern (idempotent)."""
    if tokens in intent.negative_patterns:
        return intent
    return replace(intent, negative_patterns=intent.negative_patterns + (tokens,))


# --- stream scanning ----------------------------------------------------------

@dataclass
class _UttContext:
    words: tuple[Word, ...]
    entities: tuple[EntityMatch, ...]


@dataclass
class _SpeakerScanState:
    prev: Optional[_UttContext] = None
    pending: list[IntentMatch] = field(default_factory=list)


def _overlaps(a: IntentMatch, b: IntentMatch) -> bool:
    return a.first_seq <= b.last_seq and b.first_seq <= a.last_seq


def resolve_intent_overlaps(candidates: list[IntentMatch]) -> list[IntentMatch]:
    """Per intent id: keep best score, then earliest, dropping overlaps."""
    pool = sorted(
        candidates,
        key=lambda m: (-m.score, m.first_seq, m.pattern_index, m.last_seq, m.intent_id),
    )
    kept: list[IntentMatch] = []
    for cand in pool:
        clash = any(
            k.intent_id == cand.intent_id and k.speaker == cand.speaker and _overlaps(k, cand)
            for k in kept
        )
        if not clash:
            kept.append(cand)
    return sorted(kept, key=lambda m: (m.first_seq, m.last_seq, m.intent_id))


class IntentScanner:
    """Per-call scanner; emits matches once they can no longer be displaced.

    Windows end in the newest utterance and may reach back into the previous
    utterance of the same speaker, so a candidate stays pending for one
    utterance: a later, better-scoring overlapping window of the same intent
    displaces it instead of double-reporting.
    """

    def __init__(self, intents: Iterable[IntentDef]):
        self.intents = list(intents)
        # (intent, pattern index, pattern, feasible window-length range)
        self._compiled = [
            (intent, p_idx, pattern, window_length_bounds(pattern, intent.threshold))
            for intent in self.intents
            for p_idx, pattern in enumerate(intent.patterns)
        ]
        self._state: dict[Speaker, _SpeakerScanState] = {}

    def _window_candidates(self, ctx_words: tuple[Word, ...],
                           ctx_entities: tuple[EntityMatch, ...], new_start: int) -> list[IntentMatch]:
        tokens = [w.text.lower() for w in ctx_words]
        seq_index = {w.seq: k for k, w in enumerate(ctx_words)}
        located = []
        for ent in ctx_entities:
            s, e = seq_index.get(ent.first_seq), seq_index.get(ent.last_seq)
            if s is not None and e is not None:
                located.append((ent, s, e))
        out: list[IntentMatch] = []
        for intent, p_idx, pattern, (lo, hi) in self._compiled:
            for end in range(new_start, len(tokens)):
                for length in range(lo, min(hi, end + 1) + 1):
                    start = end - length + 1
                    w_ents = [
                        WindowEntity(ent, s - start, e - start)
                        for ent, s, e in located
                        if s >= start and e <= end
                    ]
                    hit = fuzzy_align(pattern, tokens[start:end + 1], w_ents, intent.threshold)
                    if hit is None:
                        continue
                    raw = tokens[start:end + 1]
                    match = IntentMatch(
                        intent_id=intent.intent_id,
                        speaker=ctx_words[0].speaker,
                        first_seq=ctx_words[start].seq,
                        last_seq=ctx_words[end].seq,
                        score=hit.score,
                        pattern_index=p_idx,
                        bindings=hit.bindings,
                    )
                    if not apply_negative_patterns(raw, intent):
                        out.append(match)
        return out

    def push_utterance(self, utterance: Utterance, entities: list[EntityMatch]) -> list[IntentMatch]:
        """Scan one finalized utterance; returns matches that are now final."""
        state = self._state.setdefault(utterance.speaker, _SpeakerScanState())
        prev = state.prev
        ctx_words = (prev.words if prev else ()) + utterance.words
        ctx_entities = (prev.entities if prev else ()) + tuple(entities)
        new_start = len(prev.words) if prev else 0
        candidates = self._window_candidates(ctx_words, ctx_entities, new_start)
        winners = resolve_intent_overlaps(state.pending + candidates)
        boundary = utterance.words[0].seq
        final = [m for m in winners if m.last_seq < boundary]
        state.pending = [m for m in winners if m.last_seq >= boundary]
        state.prev = _UttContext(utterance.words, tuple(entities))
        return final

    def finish(self) -> list[IntentMatch]:
        """Call ended: flush every still-pending match."""
        out: list[IntentMatch] = []
        for speaker in sorted(self._state, key=lambda s: s.value):
            state = self._state[speaker]
            out.extend(resolve_intent_overlaps(state.pending))
            state.pending = []
        return sorted(out, key=lambda m: (m.first_seq, m.last_seq, m.intent_id))
