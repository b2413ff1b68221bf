"""Segmentation, punctuation, truecasing, readability turns."""

import random

from hypothesis import given, settings, strategies as st

from aci.events import Speaker
from aci.refinement import (
    CaseLexicon,
    SegmenterConfig,
    TurnConfig,
    punctuate,
    readability_sort,
    segment,
    truecase,
)

from genutil import make_word, words_from_texts

CFG = SegmenterConfig()


def timed_words(texts_and_gaps, speaker=Speaker.AGENT, word_ms=200):
    """texts_and_gaps: [(text, gap_after_ms), ...]"""
    words, t, seq = [], 0, 0
    for text, gap in texts_and_gaps:
        words.append(make_word("c1", seq, text, t, t + word_ms, speaker))
        t += word_ms + gap
        seq += 1
    return words


class TestSegment:
    def test_small_gaps_one_utterance(self):
        words = timed_words([("a", 100), ("b", 100), ("c", 0)])
        assert [len(g) for g in segment(words, CFG)] == [3]

    def test_long_gap_splits(self):
        words = timed_words([("a", 100), ("b", 800), ("c", 0)])
        assert [len(g) for g in segment(words, CFG)] == [2, 1]

    def test_length_cap(self):
        words = timed_words([(f"w{i}", 50) for i in range(61)])
        assert [len(g) for g in segment(words, CFG)] == [60, 1]

    def test_every_word_in_exactly_one_utterance(self):
        rng = random.Random(3)
        for _ in range(40):
            words = timed_words([(f"w{i}", rng.randrange(0, 1500)) for i in range(rng.randrange(1, 80))])
            groups = segment(words, CFG)
            flat = [w for g in groups for w in g]
            assert flat == words


class TestPunctuate:
    def test_question_from_interrogative_start(self):
        words = timed_words([("what", 50), ("is", 50), ("your", 50), ("account", 50), ("number", 0)])
        assert punctuate(words, CFG) == ["what", "is", "your", "account", "number?"]

    def test_period_default(self):
        words = timed_words([("i", 50), ("sent", 50), ("the", 50), ("form", 0)])
        assert punctuate(words, CFG) == ["i", "sent", "the", "form."]

    def test_comma_on_gap(self):
        words = timed_words([("yes", 400), ("thank", 50), ("you", 0)])
        assert punctuate(words, CFG) == ["yes,", "thank", "you."]

    def test_tag_question_suffix(self):
        words = timed_words([("that", 50), ("sounds", 50), ("right", 0)])
        assert punctuate(words, CFG)[-1] == "right?"

    def test_only_three_marks_and_idempotent(self):
        rng = random.Random(11)
        for _ in range(60):
            words = timed_words([(f"w{rng.randrange(20)}", rng.randrange(0, 650)) for i in range(rng.randrange(1, 12))])
            once = punctuate(words, CFG)
            for tok in once:
                assert not any(c in tok[:-1] for c in ".?")
            stripped = "".join(once)
            assert set(stripped) - set("abcdefghijklmnopqrstuvwxyzw0123456789") <= set(".,?")
            rewords = [
                make_word("c1", w.seq, t, w.start_ms, w.end_ms, w.speaker)
                for w, t in zip(words, once)
            ]
            assert punctuate(rewords, CFG) == once


class TestTruecase:
    LEX = CaseLexicon({"boston": "Boston"})

    def test_sentence_initial(self):
        assert truecase(["what", "is", "your", "name?"], self.LEX) == ["What", "is", "your", "name?"]

    def test_lexicon_and_pronoun(self):
        assert truecase(["i", "live", "in", "boston."], self.LEX) == ["I", "live", "in", "Boston."]

    def test_capital_after_terminal_mark(self):
        assert truecase(["done.", "next", "item"], self.LEX) == ["Done.", "Next", "item"]

    @given(st.lists(st.sampled_from(["hi", "boston", "i", "ok,", "sure.", "what?"]), min_size=1, max_size=10))
    @settings(max_examples=80, deadline=None)
    def test_only_case_changes(self, tokens):
        out = truecase(tokens, self.LEX)
        assert [t.lower() for t in out] == [t.lower() for t in tokens]


def interleaved(spec):
    """spec: [(speaker, start_ms), ...] -> words with per-speaker seqs."""
    seqs = {Speaker.AGENT: 0, Speaker.CUSTOMER: 0}
    out = []
    for speaker, start in spec:
        out.append(make_word("c1", seqs[speaker], f"{speaker.value[0]}{seqs[speaker]}", start, start + 100, speaker))
        seqs[speaker] += 1
    return out


class TestReadabilitySort:
    CFG = TurnConfig()

    def test_single_backchannel_rides_after_turn(self):
        # A:[w1@0,w2@500], B:[w3@250]: one pending B word below both
        # thresholds stays queued until A's turn ends
        words = interleaved([(Speaker.AGENT, 0), (Speaker.CUSTOMER, 250), (Speaker.AGENT, 500)])
        out = readability_sort(words, self.CFG)
        assert [(w.speaker, w.seq) for w in out] == [
            (Speaker.AGENT, 0), (Speaker.AGENT, 1), (Speaker.CUSTOMER, 0),
        ]

    def test_three_pending_words_force_break(self):
        words = interleaved([
            (Speaker.AGENT, 0),
            (Speaker.CUSTOMER, 100), (Speaker.CUSTOMER, 200), (Speaker.CUSTOMER, 300),
            (Speaker.AGENT, 400),
        ])
        out = readability_sort(words, self.CFG)
        assert [(w.speaker, w.seq) for w in out] == [
            (Speaker.AGENT, 0),
            (Speaker.CUSTOMER, 0), (Speaker.CUSTOMER, 1), (Speaker.CUSTOMER, 2),
            (Speaker.AGENT, 1),
        ]

    def test_old_pending_word_forces_break(self):
        words = interleaved([
            (Speaker.AGENT, 0), (Speaker.CUSTOMER, 100), (Speaker.AGENT, 1700),
        ])
        out = readability_sort(words, self.CFG)
        # the customer word aged past 1500ms before the agent's next word
        assert [(w.speaker, w.seq) for w in out] == [
            (Speaker.AGENT, 0), (Speaker.CUSTOMER, 0), (Speaker.AGENT, 1),
        ]

    def test_single_speaker_identity(self):
        words = words_from_texts("c1", Speaker.CUSTOMER, ["a", "b", "c", "d"])
        assert readability_sort(words, self.CFG) == words

    def test_permutation_and_stability(self):
        rng = random.Random(42)
        for _ in range(300):
            spec = []
            t = 0
            for _ in range(rng.randrange(0, 30)):
                t += rng.randrange(0, 700)
                spec.append((rng.choice(list(Speaker)), t))
            words = interleaved(spec)
            out = readability_sort(words, self.CFG)
            assert sorted(out, key=id) == sorted(words, key=id) or sorted(
                (w.speaker, w.seq) for w in out
            ) == sorted((w.speaker, w.seq) for w in words)
            for speaker in Speaker:
                assert [w.seq for w in out if w.speaker == speaker] == sorted(
                    w.seq for w in words if w.speaker == speaker
                )

    def test_turns_are_maximal_runs(self):
        rng = random.Random(9)
        for _ in range(100):
            spec = []
            t = 0
            for _ in range(rng.randrange(2, 25)):
                t += rng.randrange(0, 600)
                spec.append((rng.choice(list(Speaker)), t))
            out = readability_sort(interleaved(spec), self.CFG)
            # within a turn, time order is kept
            for i in range(1, len(out)):
                if out[i].speaker == out[i - 1].speaker:
                    assert out[i].start_ms >= out[i - 1].start_ms
