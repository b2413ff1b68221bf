"""Per-call processing pipeline and the multi-call engine.

One ``CallPipeline`` owns a call's whole derivation chain: words are
segmented into utterances, refined, mined for entities and intents, and every
resulting event runs through the rules engine.  The pipeline is the single
ordering authority: it assigns the dense per-call ``global_seq`` and an
event-time ``ts_ms`` derived only from word timings, so identical input words
produce byte-identical event logs at any replay speed.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .analytics import (
    DEFAULT_SUMMARY_TEMPLATE,
    default_stopwords,
    extract_keyphrases,
    generate_summary,
    load_stopwords,
)
from .entities import (
    SYSTEM_ENTITY_TYPES,
    EntityConfig,
    Gazetteer,
    extract_entities,
    load_gazetteer_dir,
)
from .events import (
    CallEnded,
    CallEvent,
    CallStarted,
    EntityExtracted,
    EntityMatch,
    IntentMatch,
    IntentMatched,
    Payload,
    RuleTriggered,
    Speaker,
    SupervisorAction,
    UtteranceFinalized,
    Word,
    WordRecognized,
)
from .ingest import ReplayClock, ReplayReport, TranscriptFile, TranscriptHeader, replay
from .intents import IntentDef, IntentScanner, parse_intents
from .refinement import CaseLexicon, RefinementConfig, Segmenter, build_utterance, transcript_turns
from .rules import Rule, RuleState, load_rules_dir
from .store import CallRecord, CallStore, tokenize_text
from .streaming import EventHub


class CallLifecycleError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    entities: EntityConfig = field(default_factory=EntityConfig)
    intents: list[IntentDef] = field(default_factory=list)
    rules: list[Rule] = field(default_factory=list)
    stopwords: frozenset[str] = field(default_factory=frozenset)
    keyphrase_k: int = 8
    summary_template: str = DEFAULT_SUMMARY_TEMPLATE

    def user_entity_types(self) -> frozenset[str]:
        return frozenset(t for t in self.entities.gazetteers if t not in SYSTEM_ENTITY_TYPES)

    def intent_categories(self) -> dict[str, str]:
        return {d.intent_id: d.category for d in self.intents}

    @classmethod
    def load(
        cls,
        intents_dir: Optional[str | Path] = None,
        rules_dir: Optional[str | Path] = None,
        gazetteers_dir: Optional[str | Path] = None,
        stopwords_path: Optional[str | Path] = None,
        lexicon_path: Optional[str | Path] = None,
        with_builtin_gazetteers: bool = True,
    ) -> "PipelineConfig":
        """Assemble a config from data directories (all optional)."""
        cfg = cls()
        cfg.stopwords = load_stopwords(stopwords_path) if stopwords_path else default_stopwords()
        if with_builtin_gazetteers:
            data = Path(__file__).parent / "data"
            for etype, fname in (("NAME", "names.txt"), ("SURNAME", "surnames.txt"), ("LOCATION", "locations.txt")):
                path = data / fname
                if path.exists():
                    cfg.entities.gazetteers[etype] = Gazetteer.load_file(etype, path)
        if gazetteers_dir:
            for etype, gaz in load_gazetteer_dir(gazetteers_dir).items():
                cfg.entities.gazetteers[etype] = gaz
        lex = CaseLexicon.load(lexicon_path) if lexicon_path else CaseLexicon()
        default_lex = Path(__file__).parent / "data" / "case_lexicon.txt"
        if lexicon_path is None and default_lex.exists():
            lex = CaseLexicon.load(default_lex)
        # gazetteer canonical forms double as casing hints ("boston" -> "Boston")
        for gaz_type in sorted(cfg.entities.gazetteers):
            gaz = cfg.entities.gazetteers[gaz_type]
            for key, canonical in gaz.entries():
                if len(key) == 1 and canonical.lower() == key[0] and canonical != key[0]:
                    lex.add(key[0], canonical)
        cfg.refinement.lexicon = lex
        user_types = frozenset(t for t in cfg.entities.gazetteers)
        if intents_dir:
            for f in sorted(Path(intents_dir).glob("*.intent")):
                cfg.intents.extend(parse_intents(f.read_text(encoding="utf-8"), user_types))
            seen: set[str] = set()
            for d in cfg.intents:
                if d.intent_id in seen:
                    raise ValueError(f"duplicate intent id {d.intent_id}")
                seen.add(d.intent_id)
        if rules_dir:
            cfg.rules = load_rules_dir(
                rules_dir,
                intents=frozenset(d.intent_id for d in cfg.intents),
                entity_types=user_types | frozenset({"NUMBER", "MONEY", "DATE", "DURATION",
                                                     "QUANTITY", "VOLUME", "PERCENT", "SPELLING"}),
            )
        return cfg


class CallPipeline:
    """Sequential event derivation for one call."""

    def __init__(
        self,
        call_id: str,
        metadata: dict[str, str],
        reference_time: Optional[str],
        config: PipelineConfig,
        emit: Callable[[CallEvent], None],
    ):
        self.call_id = call_id
        self.metadata = dict(metadata)
        self.header = TranscriptHeader(call_id, self.metadata, reference_time)
        self.config = config
        self.ended = False
        self._emit = emit
        self._lock = threading.RLock()
        self._seq = 0
        self._ts = 0
        self._max_end_ms = 0
        self._words: list[Word] = []
        self._log: list[CallEvent] = []
        self._segmenters = {
            Speaker.AGENT: Segmenter(config.refinement.segmenter),
            Speaker.CUSTOMER: Segmenter(config.refinement.segmenter),
        }
        self._scanner = IntentScanner(config.intents)
        self._rules = RuleState(config.rules)
        self._intents: list[IntentMatch] = []
        self._entities: list[EntityMatch] = []
        self._triggers: list[tuple[str, str]] = []

    @property
    def events(self) -> list[CallEvent]:
        return list(self._log)

    def _new_event(self, payload: Payload) -> CallEvent:
        ev = CallEvent(self.call_id, self._seq, self._ts, payload)
        self._seq += 1
        self._log.append(ev)
        if isinstance(payload, IntentMatched):
            self._intents.append(payload.intent)
        elif isinstance(payload, EntityExtracted):
            self._entities.append(payload.entity)
        elif isinstance(payload, RuleTriggered):
            self._triggers.append((payload.rule_id, payload.severity))
        self._emit(ev)
        return ev

    def _process(self, payload: Payload) -> CallEvent:
        ev = self._new_event(payload)
        self._rules.evaluate(ev, self._new_event)
        return ev

    def start(self) -> None:
        with self._lock:
            if self._seq != 0:
                raise CallLifecycleError("call already started")
            self._process(CallStarted(metadata=self.metadata))

    def _finalize_utterance(self, group: list[Word]) -> None:
        utt = build_utterance(group, self.config.refinement)
        self._process(UtteranceFinalized(utt))
        ents = extract_entities(utt, self.config.entities, self.header.reference_date)
        for ent in ents:
            self._process(EntityExtracted(ent))
        for match in self._scanner.push_utterance(utt, ents):
            self._process(IntentMatched(match))

    def push_word(self, word: Word) -> None:
        with self._lock:
            if self.ended:
                raise CallLifecycleError("call already ended")
            if self._seq == 0:
                raise CallLifecycleError("call not started")
            self._ts = max(self._ts, word.start_ms)
            self._max_end_ms = max(self._max_end_ms, word.end_ms)
            self._words.append(word)
            groups = self._segmenters[word.speaker].push(word)
            for g in groups:
                if g[-1] != word:  # gap-closed: finished before this word
                    self._finalize_utterance(g)
            self._process(WordRecognized(word))
            for g in groups:
                if g[-1] == word:  # cap-closed: includes this word
                    self._finalize_utterance(g)

    def inject_action(self, action: str, actor: str, note: str = "") -> CallEvent:
        with self._lock:
            if self.ended:
                raise CallLifecycleError("call already ended")
            if self._seq == 0:
                raise CallLifecycleError("call not started")
            return self._process(SupervisorAction(action=action, actor=actor, note=note))

    def end(self) -> CallRecord:
        with self._lock:
            if self.ended:
                raise CallLifecycleError("call already ended")
            if self._seq == 0:
                raise CallLifecycleError("call not started")
            self._ts = max(self._ts, self._max_end_ms)
            for speaker in (Speaker.AGENT, Speaker.CUSTOMER):
                tail = self._segmenters[speaker].flush()
                if tail:
                    self._finalize_utterance(tail)
            for match in self._scanner.finish():
                self._process(IntentMatched(match))
            # rules see the end of the call before the CallEnded event is
            # sealed, so absence triggers still precede it in the log
            virtual_end = CallEvent(self.call_id, self._seq, self._ts, CallEnded())
            self._rules.evaluate(virtual_end, self._new_event)
            self._new_event(CallEnded())
            self.ended = True
            return self._build_record()

    def _build_record(self) -> CallRecord:
        transcript = transcript_turns(self._words, self.config.refinement)
        tokens: list[str] = []
        for _, line in transcript:
            tokens.extend(tokenize_text(line))
        keyphrases = extract_keyphrases(tokens, self.config.stopwords, self.config.keyphrase_k)
        categories = self.config.intent_categories()
        summary = generate_summary(
            intents=[(m.intent_id, categories.get(m.intent_id, "")) for m in self._intents],
            entities=self._entities,
            keyphrases=keyphrases,
            triggers=self._triggers,
            template=self.config.summary_template,
        )
        started = self.header.reference_utc_ms
        return CallRecord(
            call_id=self.call_id,
            metadata=self.metadata,
            transcript=tuple((spk.value, line) for spk, line in transcript),
            events=tuple(self._log),
            intent_ids=tuple(m.intent_id for m in self._intents),
            entities=tuple(self._entities),
            keyphrases=tuple((kp.text, float(kp.score)) for kp in keyphrases),
            summary=summary.text,
            risk=self._rules.risk_score(),
            started_utc_ms=started,
            ended_utc_ms=started + self._ts,
            duration_ms=self._ts,
            ref_time_known=self.header.reference_time is not None,
        )


class Engine:
    """Coordinates concurrent call pipelines, the hub, and the store."""

    def __init__(
        self,
        config: Optional[PipelineConfig] = None,
        store: Optional[CallStore] = None,
        hub: Optional[EventHub] = None,
    ):
        self.config = config if config is not None else PipelineConfig()
        self.store = store
        self.hub = hub if hub is not None else EventHub()
        self._lock = threading.Lock()
        self._pipelines: dict[str, CallPipeline] = {}

    # CallSink protocol (live push server plugs in here)
    def start_call(
        self,
        call_id: str,
        metadata: Optional[dict[str, str]] = None,
        reference_time: Optional[str] = None,
    ) -> CallPipeline:
        with self._lock:
            if call_id in self._pipelines:
                raise CallLifecycleError(f"call {call_id} already active")
            if self.store is not None and self.store.get(call_id) is not None:
                raise CallLifecycleError(f"call {call_id} already completed")
            pipeline = CallPipeline(call_id, metadata or {}, reference_time, self.config, self.hub.publish)
            self._pipelines[call_id] = pipeline
        pipeline.start()
        return pipeline

    def _live(self, call_id: str) -> CallPipeline:
        with self._lock:
            pipeline = self._pipelines.get(call_id)
        if pipeline is None:
            raise CallLifecycleError(f"call {call_id} is not live")
        return pipeline

    def push_word(self, call_id: str, word: Word) -> None:
        self._live(call_id).push_word(word)

    def inject_action(self, call_id: str, action: str, actor: str, note: str = "") -> CallEvent:
        return self._live(call_id).inject_action(action, actor, note)

    def end_call(self, call_id: str) -> CallRecord:
        with self._lock:
            pipeline = self._pipelines.pop(call_id, None)
        if pipeline is None:
            raise CallLifecycleError(f"call {call_id} is not live")
        record = pipeline.end()
        if self.store is not None:
            self.store.index_call(record)
        return record

    def live_call_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._pipelines)

    def add_intent(self, intent: IntentDef) -> None:
        """Hot-add an intent; applies to calls started afterwards."""
        with self._lock:
            if any(d.intent_id == intent.intent_id for d in self.config.intents):
                raise ValueError(f"intent {intent.intent_id} already loaded")
            self.config.intents.append(intent)

    def reload_rules(self, rules_dir: str | Path) -> int:
        """Re-read rule files; live calls keep the rules they started with."""
        rules = load_rules_dir(
            rules_dir,
            intents=frozenset(d.intent_id for d in self.config.intents),
            entity_types=self.config.user_entity_types()
            | frozenset({"NUMBER", "MONEY", "DATE", "DURATION", "QUANTITY", "VOLUME",
                         "PERCENT", "SPELLING"}),
        )
        with self._lock:
            self.config.rules = rules
        return len(rules)

    def run_transcript(
        self,
        file: TranscriptFile,
        clock: ReplayClock,
        collect_latencies: bool = False,
    ) -> tuple[ReplayReport, CallRecord]:
        """Replay a transcript through a fresh pipeline; the call is always
        ended (CallEnded emitted) even when the replay aborts."""
        pipeline = self.start_call(file.header.call_id, file.header.metadata, file.header.reference_time)
        try:
            report = replay(file, clock, pipeline.push_word, collect_latencies=collect_latencies)
        finally:
            record = self.end_call(file.header.call_id)
        return report, record
