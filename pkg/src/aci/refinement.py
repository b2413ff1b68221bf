"""Transcript refinement: utterance segmentation, punctuation, truecasing,
and readability-turn word sorting for interleaved speakers.

All functions here are deterministic; the only state is the per-speaker
segmenter, which is confined to one call's pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

from .events import Speaker, Utterance, Word

PUNCT_MARKS = (".", ",", "?")

# Utterances opening with one of these get a question mark.
INTERROGATIVE_STARTERS = frozenset(
    "what where when who whom why how which is are was were do does did "
    "can could would will should may".split()
)

# Tag-question suffixes ("... right", "... okay") also read as questions.
TAG_QUESTION_ENDERS = frozenset(("right", "correct", "okay"))


@dataclass(frozen=True)
class SegmenterConfig:
    gap_break_ms: int = 700
    comma_gap_ms: int = 300
    max_utterance_words: int = 60

    def __post_init__(self) -> None:
        if min(self.gap_break_ms, self.comma_gap_ms, self.max_utterance_words) <= 0:
            raise ValueError("segmenter thresholds must be positive")
        if self.comma_gap_ms >= self.gap_break_ms:
            raise ValueError("comma_gap_ms must be smaller than gap_break_ms")


@dataclass(frozen=True)
class TurnConfig:
    interleave_break_words: int = 3
    interleave_break_ms: int = 1500

    def __post_init__(self) -> None:
        if self.interleave_break_words <= 0 or self.interleave_break_ms <= 0:
            raise ValueError("turn thresholds must be positive")


class CaseLexicon:
    """Lowercase token -> cased form map, plus the pronoun rule for "i"."""

    def __init__(self, entries: Optional[dict[str, str]] = None):
        self._entries: dict[str, str] = {}
        for k, v in (entries or {}).items():
            self.add(k, v)

    def add(self, lower: str, cased: str) -> None:
        if lower != lower.lower():
            raise ValueError(f"lexicon key {lower!r} must be lowercase")
        if cased.lower() != lower:
            raise ValueError(f"cased form {cased!r} must differ only in case from {lower!r}")
        self._entries[lower] = cased

    def lookup(self, token: str) -> Optional[str]:
        return self._entries.get(token)

    def __len__(self) -> int:
        return len(self._entries)

    @classmethod
    def load(cls, path: str | Path) -> "CaseLexicon":
        """Load a one-pair-per-line file: ``lowercase<TAB>Cased``."""
        lex = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'lowercase<TAB>Cased'")
            lex.add(parts[0], parts[1])
        return lex


class Segmenter:
    """Per-(call, speaker) utterance segmenter.

    A pending utterance closes when the next same-speaker word arrives after a
    silence gap of at least ``gap_break_ms``, when the word cap is reached, or
    when the call ends.
    """

    def __init__(self, cfg: SegmenterConfig):
        self.cfg = cfg
        self._pending: list[Word] = []

    def push(self, word: Word) -> list[list[Word]]:
        """Feed one word; returns the word groups closed by this arrival."""
        closed: list[list[Word]] = []
        if self._pending and word.start_ms - self._pending[-1].end_ms >= self.cfg.gap_break_ms:
            closed.append(self._pending)
            self._pending = []
        self._pending.append(word)
        if len(self._pending) >= self.cfg.max_utterance_words:
            # Cap closes immediately, with the capping word included.
            closed.append(self._pending)
            self._pending = []
        return closed

    def flush(self) -> Optional[list[Word]]:
        if not self._pending:
            return None
        closed = self._pending
        self._pending = []
        return closed


def segment(words: list[Word], cfg: SegmenterConfig) -> list[list[Word]]:
    """Split one speaker's ordered word stream into utterance word groups."""
    seg = Segmenter(cfg)
    out: list[list[Word]] = []
    for w in words:
        out.extend(seg.push(w))
    tail = seg.flush()
    if tail:
        out.append(tail)
    return out


def _strip_marks(token: str) -> str:
    return token.rstrip(".,?")


def punctuate(words: list[Word], cfg: SegmenterConfig) -> list[str]:
    """Insert commas and a terminal mark into an utterance's token list.

    A comma follows any word whose in-utterance gap to the next word is at
    least ``comma_gap_ms``.  The terminal mark is "?" for interrogative
    openers and tag-question endings, "." otherwise.  Idempotent: tokens that
    already carry a mark are left alone.
    """
    if not words:
        return []
    tokens = [w.text for w in words]
    out: list[str] = []
    for i, tok in enumerate(tokens):
        if i + 1 < len(words):
            gap = words[i + 1].start_ms - words[i].end_ms
            if gap >= cfg.comma_gap_ms and not tok.endswith(PUNCT_MARKS):
                tok = tok + ","
        out.append(tok)
    last = out[-1]
    if not last.endswith(PUNCT_MARKS):
        first_bare = _strip_marks(tokens[0]).lower()
        last_bare = _strip_marks(tokens[-1]).lower()
        mark = "?" if first_bare in INTERROGATIVE_STARTERS or last_bare in TAG_QUESTION_ENDERS else "."
        out[-1] = last + mark
    return out


def truecase(tokens: list[str], lex: CaseLexicon) -> list[str]:
    """Restore letter case: sentence-initial capitals, lexicon hits, bare "i".

    Only letter case changes; punctuation attached to tokens is preserved.
    """
    out: list[str] = []
    sentence_start = True
    for tok in tokens:
        bare = _strip_marks(tok)
        suffix = tok[len(bare):]
        lower = bare.lower()
        cased = lex.lookup(lower)
        if cased is not None:
            bare = cased
        elif lower == "i":
            bare = "I"
        if sentence_start and bare:
            bare = bare[0].upper() + bare[1:]
        out.append(bare + suffix)
        sentence_start = suffix.endswith(".") or suffix.endswith("?")
    return out


def refine_text(words: list[Word], cfg: SegmenterConfig, lex: CaseLexicon) -> str:
    """Punctuate then truecase an utterance's words into display text."""
    return " ".join(truecase(punctuate(words, cfg), lex))


def readability_sort(words: list[Word], cfg: TurnConfig) -> list[Word]:
    """Regroup interleaved two-speaker words into contiguous single-speaker turns.

    The output is a permutation of the input that preserves each speaker's own
    order.  The current turn keeps collecting its speaker's words; the other
    speaker's words queue up, and the turn switches only once the queue holds
    ``interleave_break_words`` words or its oldest word has aged past
    ``interleave_break_ms``.  Brief back-channel interjections therefore ride
    after the turn instead of splitting it.
    """
    if not words:
        return []
    ordered = sorted(words, key=lambda w: (w.start_ms, w.speaker != Speaker.AGENT, w.seq))
    out: list[Word] = []
    current = ordered[0].speaker
    pending: list[Word] = []

    def flip() -> None:
        nonlocal current, pending
        out.extend(pending)
        pending = []
        current = Speaker.CUSTOMER if current == Speaker.AGENT else Speaker.AGENT

    for w in ordered:
        if w.speaker == current:
            if pending and w.start_ms - pending[0].start_ms >= cfg.interleave_break_ms:
                flip()
                pending.append(w)  # w now belongs to the waiting side
            else:
                out.append(w)
        else:
            pending.append(w)
            if len(pending) >= cfg.interleave_break_words or (
                w.start_ms - pending[0].start_ms >= cfg.interleave_break_ms
            ):
                flip()
    out.extend(pending)
    return out


class Punctuator(Protocol):
    """Pluggable punctuation backend; the default is the rule set above."""

    def __call__(self, words: list[Word], cfg: SegmenterConfig) -> list[str]: ...


@dataclass
class RefinementConfig:
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    turns: TurnConfig = field(default_factory=TurnConfig)
    lexicon: CaseLexicon = field(default_factory=CaseLexicon)
    punctuator: Punctuator = punctuate


def build_utterance(words: list[Word], rc: RefinementConfig) -> Utterance:
    tokens = truecase(rc.punctuator(words, rc.segmenter), rc.lexicon)
    return Utterance.from_words(words, " ".join(tokens))


def transcript_turns(words: list[Word], rc: RefinementConfig) -> list[tuple[Speaker, str]]:
    """Readable whole-call transcript: readability-sorted turns, refined text.

    Each turn is re-segmented with the utterance rules so long turns still
    break into sentence-sized lines.
    """
    lines: list[tuple[Speaker, str]] = []
    sorted_words = readability_sort(words, rc.turns)
    turn: list[Word] = []
    for w in sorted_words:
        if turn and w.speaker != turn[0].speaker:
            for group in segment(turn, rc.segmenter):
                lines.append((group[0].speaker, " ".join(truecase(rc.punctuator(group, rc.segmenter), rc.lexicon))))
            turn = []
        turn.append(w)
    if turn:
        for group in segment(turn, rc.segmenter):
            lines.append((group[0].speaker, " ".join(truecase(rc.punctuator(group, rc.segmenter), rc.lexicon))))
    return lines
