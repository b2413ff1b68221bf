"""Post-call analytics: keyphrase extraction, template summaries, topic trees.

Keyphrase scoring follows the degree/frequency co-occurrence ranking over
stopword-free candidate runs, computed in exact rational arithmetic so results
are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .events import EntityMatch, MoneyValue, DateValue, DurationValue

MAX_KEYPHRASE_WORDS = 5
DEFAULT_TOPIC_MIN_SIZE = 2

_CURRENCY_SYMBOLS = {"USD": "$", "EUR": "€", "GBP": "£"}


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One token per line; blank lines and # comments ignored."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


def default_stopwords() -> frozenset[str]:
    return load_stopwords(Path(__file__).parent / "data" / "stopwords.txt")


@dataclass(frozen=True)
class Keyphrase:
    phrase: tuple[str, ...]
    score: Fraction

    @property
    def text(self) -> str:
        return " ".join(self.phrase)


def keyphrase_candidates(tokens: Sequence[str], stopwords: frozenset[str]) -> list[tuple[str, ...]]:
    """Maximal stopword-free runs, chunked to at most MAX_KEYPHRASE_WORDS."""
    candidates: list[tuple[str, ...]] = []
    run: list[str] = []

    def close() -> None:
        nonlocal run
        for i in range(0, len(run), MAX_KEYPHRASE_WORDS):
            chunk = tuple(run[i:i + MAX_KEYPHRASE_WORDS])
            if chunk:
                candidates.append(chunk)
        run = []

    for tok in tokens:
        tok = tok.lower().strip(".,?")
        if not tok or tok in stopwords:
            close()
        else:
            run.append(tok)
    close()
    return candidates


def extract_keyphrases(
    tokens: Sequence[str], stopwords: frozenset[str], k: int
) -> list[Keyphrase]:
    """Top-k candidate phrases by summed member word degree/frequency scores.

    degree(w) counts w's within-candidate co-occurrences including itself
    (the candidate length, summed over occurrences); frequency(w) counts
    occurrences.  Ordering: score descending, then phrase text ascending.
    """
    candidates = keyphrase_candidates(tokens, stopwords)
    if not candidates or k <= 0:
        return []
    freq: dict[str, int] = {}
    degree: dict[str, int] = {}
    for cand in candidates:
        for w in cand:
            freq[w] = freq.get(w, 0) + 1
            degree[w] = degree.get(w, 0) + len(cand)
    word_score = {w: Fraction(degree[w], freq[w]) for w in freq}
    scored: dict[tuple[str, ...], Fraction] = {}
    for cand in candidates:
        if cand not in scored:
            scored[cand] = sum((word_score[w] for w in cand), Fraction(0))
    ranked = sorted(scored.items(), key=lambda kv: (-kv[1], " ".join(kv[0])))
    return [Keyphrase(phrase, score) for phrase, score in ranked[:k]]


# --- summary generation -------------------------------------------------------

DEFAULT_SUMMARY_TEMPLATE = (
    "Topic: {reason}.{intents_clause}{entities_clause}{alerts_clause}"
)


@dataclass(frozen=True)
class CallSummary:
    text: str
    fingerprint: dict

    def __post_init__(self) -> None:
        if not isinstance(self.fingerprint, dict):
            raise ValueError("fingerprint must be a dict")


def format_money(value: MoneyValue) -> str:
    symbol = _CURRENCY_SYMBOLS.get(value.currency, value.currency + " ")
    return f"{symbol}{value.amount_minor // 100}.{value.amount_minor % 100:02d}"


def format_duration(seconds: int) -> str:
    if seconds % 3600 == 0:
        return f"{seconds // 3600}h"
    if seconds % 60 == 0:
        return f"{seconds // 60}m"
    return f"{seconds}s"


def _notable_entities(entities: Iterable[EntityMatch]) -> list[str]:
    out = []
    for ent in entities:
        if isinstance(ent.value, MoneyValue):
            out.append(format_money(ent.value))
        elif isinstance(ent.value, DateValue):
            out.append(ent.value.iso)
        elif isinstance(ent.value, DurationValue):
            out.append(format_duration(ent.value.seconds))
    return out


def generate_summary(
    intents: Sequence[tuple[str, str]],
    entities: Sequence[EntityMatch],
    keyphrases: Sequence[Keyphrase],
    triggers: Sequence[tuple[str, str]],
    template: str = DEFAULT_SUMMARY_TEMPLATE,
) -> CallSummary:
    """Deterministic template summary.

    ``intents`` are (intent_id, category) pairs in chronological match order;
    ``triggers`` are (rule_id, severity) pairs in firing order.  The reason is
    the dominant intent category (most matches, then earliest), falling back
    to the top keyphrase for calls that matched nothing.
    """
    if intents:
        by_cat: dict[str, list[int]] = {}
        for pos, (intent_id, category) in enumerate(intents):
            by_cat.setdefault(category or intent_id, []).append(pos)
        reason = min(by_cat, key=lambda c: (-len(by_cat[c]), by_cat[c][0]))
        seen = set()
        ordered_ids = []
        for intent_id, _ in intents:
            if intent_id not in seen:
                seen.add(intent_id)
                ordered_ids.append(intent_id)
        intents_clause = " Intents: " + ", ".join(ordered_ids) + "."
    elif keyphrases:
        reason = keyphrases[0].text
        intents_clause = " No configured intents matched."
    else:
        reason = "general conversation"
        intents_clause = " No configured intents matched."

    notable = _notable_entities(entities)
    entities_clause = " Mentioned: " + "; ".join(notable) + "." if notable else ""
    if triggers:
        alerts = ", ".join(f"{rule_id} ({severity})" for rule_id, severity in triggers)
        alerts_clause = " Alerts: " + alerts + "."
    else:
        alerts_clause = ""

    text = template.format(
        reason=reason,
        intents_clause=intents_clause,
        entities_clause=entities_clause,
        alerts_clause=alerts_clause,
    )
    fingerprint = {
        "intents": [list(p) for p in intents],
        "entities": [[e.type, str(e.value)] for e in entities],
        "keyphrases": [kp.text for kp in keyphrases],
        "triggers": [list(t) for t in triggers],
    }
    return CallSummary(text=text, fingerprint=fingerprint)


# --- topic mining ---------------------------------------------------------

@dataclass
class TopicNode:
    label: str
    call_ids: list[str]
    children: list["TopicNode"] = field(default_factory=list)


def _fold(phrase: str) -> str:
    """Canonical folding for grouping: lowercase, light plural stemming."""
    words = []
    for w in phrase.lower().split():
        if len(w) > 3 and w.endswith("s") and not w.endswith("ss"):
            w = w[:-1]
        words.append(w)
    return " ".join(words)


def _group_label(raw_forms: list[str]) -> str:
    counts: dict[str, int] = {}
    for form in raw_forms:
        counts[form] = counts.get(form, 0) + 1
    return min(counts, key=lambda f: (-counts[f], f))


def build_topic_tree(
    calls: Sequence[tuple[str, list[str]]], min_size: int = DEFAULT_TOPIC_MIN_SIZE
) -> list[TopicNode]:
    """Two-level topic grouping over (call_id, ranked keyphrase texts) pairs.

    Level 1 groups by each call's top keyphrase (folded); level 2 subdivides
    by the next keyphrase.  Groups under ``min_size`` merge into "other".
    Ordering: group size descending, then label ascending.
    """
    groups: dict[str, dict] = {}
    for call_id, phrases in calls:
        if not phrases:
            continue
        key = _fold(phrases[0])
        g = groups.setdefault(key, {"forms": [], "members": []})
        g["forms"].append(phrases[0])
        g["members"].append((call_id, phrases))

    nodes: list[TopicNode] = []
    other_calls: list[str] = []
    for key in groups:
        g = groups[key]
        if len(g["members"]) < min_size:
            other_calls.extend(cid for cid, _ in g["members"])
            continue
        label = _group_label(g["forms"])
        node = TopicNode(label=label, call_ids=[cid for cid, _ in g["members"]])
        # level 2: bucket members by their next distinct keyphrase
        sub: dict[str, dict] = {}
        sub_other: list[str] = []
        for cid, phrases in g["members"]:
            second = next((p for p in phrases[1:] if _fold(p) != key), None)
            if second is None:
                sub_other.append(cid)
                continue
            s = sub.setdefault(_fold(second), {"forms": [], "members": []})
            s["forms"].append(second)
            s["members"].append(cid)
        for skey in sub:
            s = sub[skey]
            if len(s["members"]) < min_size:
                sub_other.extend(s["members"])
            else:
                node.children.append(TopicNode(_group_label(s["forms"]), s["members"]))
        if sub_other:
            node.children.append(TopicNode("other", sub_other))
        node.children.sort(key=lambda n: (-len(n.call_ids), n.label))
        for child in node.children:
            child.call_ids.sort()
        node.call_ids.sort()
        nodes.append(node)
    if other_calls:
        nodes.append(TopicNode("other", sorted(other_calls)))
    nodes.sort(key=lambda n: (-len(n.call_ids), n.label))
    return nodes
