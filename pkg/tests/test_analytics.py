"""Keyphrase scoring vs brute-force recomputation, summaries, topic trees."""

import random
from fractions import Fraction

from aci.analytics import (
    Keyphrase,
    build_topic_tree,
    extract_keyphrases,
    format_money,
    generate_summary,
    keyphrase_candidates,
)
from aci.events import DateValue, DurationValue, EntityMatch, MoneyValue, Speaker

from genutil import VOCAB, FILLER
from oracles import oracle_keyphrase_scores

STOP = frozenset("the a of and to is was in on for i my your it that".split())


class TestKeyphrases:
    def test_all_stopwords_empty(self):
        assert extract_keyphrases(["the", "a", "of"], STOP, 5) == []

    def test_single_candidate_hand_computed(self):
        # "billing error": each word occurs once in one 2-word candidate,
        # so degree 2 / frequency 1 = 2, phrase score 2 + 2 = 4
        tokens = ["the", "billing", "error", "of", "it"]
        out = extract_keyphrases(tokens, STOP, 5)
        assert out == [Keyphrase(("billing", "error"), Fraction(4))]

    def test_candidates_capped_at_five_words(self):
        tokens = ["one", "two", "three", "four", "five", "six", "seven"]
        cands = keyphrase_candidates(tokens, STOP)
        assert cands == [("one", "two", "three", "four", "five"), ("six", "seven")]

    def test_scores_match_bruteforce_on_random_texts(self):
        rng = random.Random(21)
        vocab = VOCAB + FILLER + list(STOP)
        for _ in range(20):
            tokens = [rng.choice(vocab) for _ in range(rng.randrange(5, 120))]
            got = {kp.phrase: kp.score for kp in extract_keyphrases(tokens, STOP, 10_000)}
            want = oracle_keyphrase_scores(tokens, STOP)
            assert got == want

    def test_top_k_ordering(self):
        tokens = "billing error today billing error the payment failure the payment failure the zebra".split()
        out = extract_keyphrases(tokens, STOP, 3)
        scores = [kp.score for kp in out]
        assert scores == sorted(scores, reverse=True)
        equal_pairs = [(a.text, b.text) for a, b in zip(out, out[1:]) if a.score == b.score]
        for a, b in equal_pairs:
            assert a < b

    def test_sentence_order_invariance(self):
        rng = random.Random(3)
        sentences = [
            ["billing", "error", "the"],
            ["late", "delivery", "a"],
            ["billing", "error", "of"],
            ["refund", "request", "to"],
        ]
        base = None
        for _ in range(5):
            rng.shuffle(sentences)
            tokens = [t for s in sentences for t in s]
            scores = {kp.phrase: kp.score for kp in extract_keyphrases(tokens, STOP, 100)}
            if base is None:
                base = scores
            assert scores == base


def money(minor, cur="USD"):
    return EntityMatch("MONEY", Speaker.CUSTOMER, 0, 1, "x", MoneyValue(minor, cur))


class TestSummary:
    def test_no_intents_topic_from_keyphrase(self):
        s = generate_summary([], [], [Keyphrase(("delivery", "delay"), Fraction(4))], [])
        assert s.text == "Topic: delivery delay. No configured intents matched."

    def test_intents_and_money(self):
        s = generate_summary(
            intents=[("refund_request", "billing")],
            entities=[money(500)],
            keyphrases=[],
            triggers=[],
        )
        assert "refund" in s.text and "$5.00" in s.text
        assert s.text.startswith("Topic: billing.")

    def test_deterministic(self):
        args = dict(
            intents=[("a", "cat"), ("b", "cat"), ("a", "cat")],
            entities=[money(123456, "EUR"),
                      EntityMatch("DATE", Speaker.AGENT, 0, 1, "d", DateValue("2025-07-04")),
                      EntityMatch("DURATION", Speaker.AGENT, 2, 3, "d", DurationValue(7200))],
            keyphrases=[Keyphrase(("x",), Fraction(1))],
            triggers=[("big_refund", "CRITICAL")],
        )
        s1, s2 = generate_summary(**args), generate_summary(**args)
        assert s1.text == s2.text and s1.fingerprint == s2.fingerprint
        assert "€1234.56" in s1.text and "2025-07-04" in s1.text and "2h" in s1.text
        assert "big_refund (CRITICAL)" in s1.text

    def test_dominant_category_wins(self):
        s = generate_summary(
            intents=[("x", "shipping"), ("y", "billing"), ("z", "billing")],
            entities=[], keyphrases=[], triggers=[],
        )
        assert s.text.startswith("Topic: billing.")
        assert "Intents: x, y, z." in s.text

    def test_format_money(self):
        assert format_money(MoneyValue(500, "USD")) == "$5.00"
        assert format_money(MoneyValue(7, "GBP")) == "£0.07"


def call(call_id, *phrases):
    return (call_id, list(phrases))


class TestTopicTree:
    def test_two_calls_share_top_phrase(self):
        nodes = build_topic_tree([call("c1", "billing error"), call("c2", "billing errors")])
        assert len(nodes) == 1
        assert nodes[0].label == "billing error"
        assert nodes[0].call_ids == ["c1", "c2"]

    def test_empty(self):
        assert build_topic_tree([]) == []

    def test_small_groups_merge_into_other(self):
        nodes = build_topic_tree([
            call("c1", "billing error"), call("c2", "billing error"),
            call("c3", "rare thing"),
        ])
        assert [n.label for n in nodes] == ["billing error", "other"]
        assert nodes[1].call_ids == ["c3"]

    def test_level2_partitions_parent(self):
        nodes = build_topic_tree([
            call("c1", "billing error", "late fee"),
            call("c2", "billing error", "late fee"),
            call("c3", "billing error", "refund request"),
            call("c4", "billing error"),
        ])
        assert len(nodes) == 1
        parent = nodes[0]
        child_ids = [cid for ch in parent.children for cid in ch.call_ids]
        assert sorted(child_ids) == parent.call_ids
        labels = [ch.label for ch in parent.children]
        assert "late fee" in labels and "other" in labels

    def test_matches_bruteforce_grouping_on_random_calls(self):
        rng = random.Random(50)
        pool = ["billing error", "late delivery", "password reset", "refund request",
                "account upgrade", "billing errors"]
        for _ in range(20):
            calls = []
            for i in range(30):
                n = rng.randrange(1, 4)
                calls.append((f"c{i}", rng.sample(pool, n)))
            nodes = build_topic_tree(calls)
            # oracle: group by folded top phrase
            def fold(p):
                return " ".join(w[:-1] if len(w) > 3 and w.endswith("s") and not w.endswith("ss") else w
                                for w in p.lower().split())
            want = {}
            for cid, phrases in calls:
                want.setdefault(fold(phrases[0]), []).append(cid)
            big = {k: sorted(v) for k, v in want.items() if len(v) >= 2}
            other = sorted(cid for k, v in want.items() if len(v) < 2 for cid in v)
            got_big = {}
            got_other = []
            for n in nodes:
                if n.label == "other" and n.children == []:
                    got_other = n.call_ids
                else:
                    got_big[fold(n.label)] = n.call_ids
            if other:
                assert got_other == other
            assert got_big == big
            # ordering: size desc then label asc
            sizes = [(-len(n.call_ids), n.label) for n in nodes]
            assert sizes == sorted(sizes)

    def test_depth_at_most_two(self):
        nodes = build_topic_tree([
            call(f"c{i}", "billing error", "late fee", "third phrase") for i in range(4)
        ])
        for n in nodes:
            for ch in n.children:
                assert ch.children == []
