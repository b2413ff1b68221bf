"""Intent training over historical calls: mass annotation, synonym
recommendation, verification against labeled spans, and false-positive
feedback.

Annotation runs the exact scanner the live pipeline uses, so offline counts
and live matches cannot drift apart.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .events import (
    EntityExtracted,
    EntityMatch,
    IntentMatch,
    Speaker,
    Utterance,
    UtteranceFinalized,
    Word,
)
from .intents import IntentDef, IntentScanner, with_negative
from .pipeline import CallPipeline, PipelineConfig
from .store import CallRecord, CallStore

SNIPPET_CONTEXT_WORDS = 5
CONTEXT_WINDOW = 2  # tokens each side for co-occurrence vectors


@dataclass(frozen=True)
class Label:
    call_id: str
    first_seq: int
    last_seq: int
    intent_id: str
    speaker: Optional[Speaker] = None


def load_labels(path: str | Path) -> list[Label]:
    """Sidecar JSON-lines: {"call_id","first_seq","last_seq","intent_id"[,"speaker"]}."""
    labels = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            labels.append(
                Label(
                    call_id=obj["call_id"],
                    first_seq=int(obj["first_seq"]),
                    last_seq=int(obj["last_seq"]),
                    intent_id=obj["intent_id"],
                    speaker=Speaker(obj["speaker"]) if "speaker" in obj else None,
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad label line: {exc}") from None
    return labels


@dataclass
class CorpusCall:
    call_id: str
    words: list[Word]
    utterances: list[tuple[Utterance, list[EntityMatch]]]  # in event order


@dataclass
class Corpus:
    calls: list[CorpusCall]
    labels: list[Label] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen = set()
        for c in self.calls:
            if c.call_id in seen:
                raise ValueError(f"duplicate call id {c.call_id}")
            seen.add(c.call_id)

    @classmethod
    def from_records(cls, records: Iterable[CallRecord]) -> "Corpus":
        calls = []
        for rec in records:
            utterances: list[tuple[Utterance, list[EntityMatch]]] = []
            words: list[Word] = []
            for e in rec.events:
                if isinstance(e.payload, UtteranceFinalized):
                    utterances.append((e.payload.utterance, []))
                elif isinstance(e.payload, EntityExtracted) and utterances:
                    utterances[-1][1].append(e.payload.entity)
                elif e.type == "word_recognized":
                    words.append(e.payload.word)
            calls.append(CorpusCall(rec.call_id, words, utterances))
        return cls(calls)

    @classmethod
    def from_store_dir(cls, directory: str | Path) -> "Corpus":
        store = CallStore(directory)
        try:
            return cls.from_records(store.all_records())
        finally:
            store.close()

    @classmethod
    def from_transcripts(cls, paths: Iterable[str | Path], config: Optional[PipelineConfig] = None) -> "Corpus":
        """Build a corpus from raw transcript files: refinement and entity
        extraction run offline with no intents or rules loaded."""
        from .ingest import load_transcript, replay_order

        base = config if config is not None else PipelineConfig.load()
        bare = dataclasses.replace(base, intents=[], rules=[])
        calls = []
        for path in paths:
            file = load_transcript(path)
            pipeline = CallPipeline(
                file.header.call_id, file.header.metadata, file.header.reference_time,
                bare, emit=lambda e: None,
            )
            pipeline.start()
            for w in replay_order(file.words):
                pipeline.push_word(w)
            rec = pipeline.end()
            corpus = cls.from_records([rec])
            calls.append(corpus.calls[0])
        return cls(calls)

    @classmethod
    def load(cls, directory: str | Path, config: Optional[PipelineConfig] = None) -> "Corpus":
        """A store directory (calls.jsonl) or a directory of transcript files."""
        directory = Path(directory)
        if (directory / "calls.jsonl").exists():
            return cls.from_store_dir(directory)
        files = sorted(directory.glob("*.jsonl"))
        if not files:
            raise ValueError(f"no corpus found under {directory}")
        return cls.from_transcripts(files, config)


@dataclass(frozen=True)
class TrainMatch:
    call_id: str
    speaker: Speaker
    first_seq: int
    last_seq: int
    score: float
    snippet: str


@dataclass
class VerificationReport:
    matches: list[TrainMatch]
    call_count: int
    calls_with_matches: int
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None

    @property
    def match_count(self) -> int:
        return len(self.matches)

    def metric_line(self) -> str:
        def fmt(x: Optional[float]) -> str:
            return "—" if x is None else f"{x:.3f}"

        return f"precision {fmt(self.precision)}  recall {fmt(self.recall)}  f1 {fmt(self.f1)}"


def _snippet(call: CorpusCall, match: IntentMatch) -> str:
    speaker_words = [w for w in call.words if w.speaker == match.speaker]
    index = {w.seq: i for i, w in enumerate(speaker_words)}
    lo = index.get(match.first_seq, 0)
    hi = index.get(match.last_seq, len(speaker_words) - 1)
    start = max(0, lo - SNIPPET_CONTEXT_WORDS)
    end = min(len(speaker_words), hi + 1 + SNIPPET_CONTEXT_WORDS)
    parts = []
    for i in range(start, end):
        text = speaker_words[i].text
        parts.append(f"[{text}]" if lo <= i <= hi else text)
    return " ".join(parts)


def scan_call(intent: IntentDef, call: CorpusCall) -> list[IntentMatch]:
    """The live matcher, run offline over one call's utterance sequence."""
    scanner = IntentScanner([intent])
    out: list[IntentMatch] = []
    for utt, ents in call.utterances:
        out.extend(scanner.push_utterance(utt, ents))
    out.extend(scanner.finish())
    return out


def annotate_corpus(intent: IntentDef, corpus: Corpus) -> VerificationReport:
    """Run the intent over every call; every match gets a ±5 word snippet."""
    matches: list[TrainMatch] = []
    calls_hit = 0
    for call in corpus.calls:
        found = scan_call(intent, call)
        if found:
            calls_hit += 1
        for m in found:
            matches.append(
                TrainMatch(
                    call_id=call.call_id,
                    speaker=m.speaker,
                    first_seq=m.first_seq,
                    last_seq=m.last_seq,
                    score=m.score,
                    snippet=_snippet(call, m),
                )
            )
    return VerificationReport(matches=matches, call_count=len(corpus.calls), calls_with_matches=calls_hit)


def _overlaps_label(m: TrainMatch, label: Label) -> bool:
    if m.call_id != label.call_id:
        return False
    if label.speaker is not None and m.speaker != label.speaker:
        return False
    return m.first_seq <= label.last_seq and label.first_seq <= m.last_seq


def verify_intent(intent: IntentDef, corpus: Corpus) -> VerificationReport:
    """Annotate plus precision/recall against the corpus labels.

    A match is a true positive iff it overlaps (shares at least one word
    with) a labeled span of the same intent.
    """
    report = annotate_corpus(intent, corpus)
    labels = [l for l in corpus.labels if l.intent_id == intent.intent_id]
    tp = sum(1 for m in report.matches if any(_overlaps_label(m, l) for l in labels))
    matched_labels = sum(1 for l in labels if any(_overlaps_label(m, l) for m in report.matches))
    report.precision = tp / len(report.matches) if report.matches else None
    report.recall = matched_labels / len(labels) if labels else None
    if report.precision is not None and report.recall is not None and (report.precision + report.recall) > 0:
        report.f1 = 2 * report.precision * report.recall / (report.precision + report.recall)
    return report


def tokens_for_span(call: CorpusCall, first_seq: int, last_seq: int,
                    speaker: Optional[Speaker] = None) -> tuple[str, ...]:
    candidates = []
    for spk in (Speaker.AGENT, Speaker.CUSTOMER):
        if speaker is not None and spk != speaker:
            continue
        words = [w for w in call.words if w.speaker == spk and first_seq <= w.seq <= last_seq]
        if words:
            candidates.append(tuple(w.text.lower() for w in words))
    if not candidates:
        raise ValueError(f"no words in span {first_seq}..{last_seq}")
    if len(candidates) > 1:
        raise ValueError("span is ambiguous between speakers; pass the speaker")
    return candidates[0]


def record_false_positive(intent: IntentDef, matched_tokens: tuple[str, ...]) -> IntentDef:
    """Append the match's raw token sequence as a negative pattern (idempotent)."""
    return with_negative(intent, tuple(t.lower() for t in matched_tokens))


# --- synonym recommendation -----------------------------------------------

class SynonymModel:
    """Distributional synonym recommender over ±2-token context counts.

    Accepting a pair merges both tokens into one synonym set whose vector is
    the sum (centroid direction) of its members; rejecting a pair permanently
    blocks that recommendation.  Both kinds of feedback reshape later
    rankings.
    """

    def __init__(self, stopwords: frozenset[str] = frozenset()):
        self.stopwords = stopwords
        self.vectors: dict[str, Counter] = {}
        self.sets: dict[int, set[str]] = {}
        self.set_of: dict[str, int] = {}
        self.rejected: set[frozenset[str]] = set()
        self._next_set = 1

    @classmethod
    def build(cls, corpus: Corpus, stopwords: frozenset[str] = frozenset()) -> "SynonymModel":
        model = cls(stopwords)
        for call in corpus.calls:
            for utt, _ in call.utterances:
                tokens = [w.text.lower() for w in utt.words]
                for i, tok in enumerate(tokens):
                    vec = model.vectors.setdefault(tok, Counter())
                    lo = max(0, i - CONTEXT_WINDOW)
                    for j in range(lo, min(len(tokens), i + CONTEXT_WINDOW + 1)):
                        if j != i:
                            vec[tokens[j]] += 1
        return model

    def _effective_vector(self, token: str) -> Counter:
        set_id = self.set_of.get(token)
        if set_id is None:
            return self.vectors.get(token, Counter())
        merged: Counter = Counter()
        for member in self.sets[set_id]:
            merged.update(self.vectors.get(member, Counter()))
        return merged

    @staticmethod
    def _cosine(a: Counter, b: Counter) -> float:
        if not a or not b:
            return 0.0
        dot = sum(v * b[k] for k, v in a.items() if k in b)
        if dot == 0:
            return 0.0
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        return dot / (na * nb)

    def recommend(self, token: str, k: int) -> list[tuple[str, float]]:
        """Top-k candidate synonyms as (token, cosine), ties broken by token."""
        if token not in self.vectors:
            return []
        base = self._effective_vector(token)
        own_set = self.set_of.get(token)
        scored = []
        for cand in self.vectors:
            if cand == token or cand in self.stopwords:
                continue
            if own_set is not None and self.set_of.get(cand) == own_set:
                continue
            if frozenset((token, cand)) in self.rejected:
                continue
            sim = self._cosine(base, self._effective_vector(cand))
            if sim > 0:
                scored.append((cand, sim))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    def accept(self, a: str, b: str) -> None:
        sa, sb = self.set_of.get(a), self.set_of.get(b)
        if sa is not None and sb is not None:
            if sa == sb:
                return
            self.sets[sa] |= self.sets.pop(sb)
            for tok in self.sets[sa]:
                self.set_of[tok] = sa
            return
        if sa is None and sb is None:
            set_id = self._next_set
            self._next_set += 1
            self.sets[set_id] = {a, b}
            self.set_of[a] = set_id
            self.set_of[b] = set_id
            return
        set_id = sa if sa is not None else sb
        assert set_id is not None
        self.sets[set_id].add(a if sa is None else b)
        self.set_of[a] = set_id
        self.set_of[b] = set_id

    def reject(self, a: str, b: str) -> None:
        self.rejected.add(frozenset((a, b)))

    def synonym_sets(self) -> list[set[str]]:
        return [set(members) for _, members in sorted(self.sets.items())]
