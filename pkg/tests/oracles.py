"""Independent oracles: brute-force / enumeration implementations used to
check the production code.  Nothing here imports the algorithms under test;
shared vocabulary-level constants are redeclared on purpose."""

from __future__ import annotations

import datetime as dt
from fractions import Fraction
from functools import lru_cache

# --- number rendering (round-trip generator) -----------------------------

_UNITS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"]
_TEENS = ["ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
          "seventeen", "eighteen", "nineteen"]
_TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]


def render_below_100(n: int) -> list[str]:
    if n < 10:
        return [_UNITS[n]]
    if n < 20:
        return [_TEENS[n - 10]]
    tens, unit = divmod(n, 10)
    return [_TENS[tens]] + ([_UNITS[unit]] if unit else [])


def render_below_1000(n: int, use_and: bool) -> list[str]:
    if n < 100:
        return render_below_100(n)
    hundreds, rest = divmod(n, 100)
    out = [_UNITS[hundreds], "hundred"]
    if rest:
        if use_and:
            out.append("and")
        out.extend(render_below_100(rest))
    return out


def render_number(n: int, use_and: bool = False) -> list[str]:
    """English word rendering of 0..999,999,999 as lowercase tokens."""
    if n == 0:
        return ["zero"]
    out: list[str] = []
    millions, rest = divmod(n, 1_000_000)
    thousands, below = divmod(rest, 1000)
    if millions:
        out.extend(render_below_1000(millions, use_and) + ["million"])
    if thousands:
        out.extend(render_below_1000(thousands, use_and) + ["thousand"])
    if below:
        if out and below < 100 and use_and:
            out.append("and")
        out.extend(render_below_1000(below, use_and))
    return out


def render_money(dollars: int, cents: int, currency_word: str, use_and_join: bool = True) -> list[str]:
    out = render_number(dollars) + [currency_word]
    if cents:
        if use_and_join:
            out.append("and")
            out.extend(render_number(cents) + ["cents"])
        else:
            out.extend(render_number(cents) + ["cents"])
    return out


def render_duration(n: int, unit_word: str) -> list[str]:
    return render_number(n) + [unit_word]


UNIT_SECONDS = {"seconds": 1, "minutes": 60, "hours": 3600, "days": 86400, "weeks": 604800}


# --- calendar walk (relative date oracle) ------------------------------------

_WEEKDAY_INDEX = {"monday": 0, "tuesday": 1, "wednesday": 2, "thursday": 3,
                  "friday": 4, "saturday": 5, "sunday": 6}


def walk_to_weekday(reference: dt.date, weekday: str, direction: str) -> dt.date:
    """Day-by-day walk to the nearest strictly-past/future named weekday."""
    step = dt.timedelta(days=1 if direction == "next" else -1)
    day = reference + step
    while day.weekday() != _WEEKDAY_INDEX[weekday]:
        day += step
    return day


# --- exhaustive fuzzy alignment ------------------------------------------

@lru_cache(maxsize=None)
def lev_recursive(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        lev_recursive(a[:-1], b) + 1,
        lev_recursive(a, b[:-1]) + 1,
        lev_recursive(a[:-1], b[:-1]) + (a[-1] != b[-1]),
    )


def oracle_literal_cost(pattern_word: str, window_word: str, discount_max: float = 0.34) -> float:
    if pattern_word == window_word:
        return 0.0
    d = lev_recursive(pattern_word, window_word) / max(len(pattern_word), len(window_word))
    return d if d <= discount_max else 1.0


def enumerate_alignment_cost(pattern, window, entities=()) -> float | None:
    """Minimum alignment cost by plain recursion over every path.

    ``pattern`` uses the production token classes only as data (isinstance
    checks); the search itself is an independent enumeration.
    ``entities`` are (entity_type, start, end) window spans.
    """
    from aci.intents import Alternation, EntitySlot, Gap, Literal, OptionalTok

    INF = float("inf")

    def go(i: int, j: int) -> float:
        if i == len(pattern) and j == len(window):
            return 0.0
        best = INF
        if i < len(pattern):
            tok = pattern[i]
            optional = isinstance(tok, OptionalTok)
            inner = tok.inner if optional else tok
            # skip this pattern token
            if optional or isinstance(inner, Gap):
                best = min(best, go(i + 1, j))
            elif isinstance(inner, EntitySlot):
                pass  # a required slot cannot be skipped
            else:
                best = min(best, 1.0 + go(i + 1, j))
            if isinstance(inner, Literal) and j < len(window):
                best = min(best, oracle_literal_cost(inner.word, window[j]) + go(i + 1, j + 1))
            if isinstance(inner, Alternation):
                if j < len(window):
                    best = min(best, 1.0 + go(i + 1, j + 1))
                for alt in inner.alts:
                    L = len(alt)
                    if j + L <= len(window) and tuple(window[j:j + L]) == alt:
                        best = min(best, go(i + 1, j + L))
            if isinstance(inner, EntitySlot):
                for etype, s, e in entities:
                    if etype == inner.entity_type and s == j and e < len(window):
                        best = min(best, go(i + 1, e + 1))
            if isinstance(inner, Gap):
                for m in range(1, inner.max_skip + 1):
                    if j + m <= len(window):
                        best = min(best, go(i + 1, j + m))
        if j < len(window):
            best = min(best, 1.0 + go(i, j + 1))
        return best

    cost = go(0, 0)
    return None if cost == float("inf") else cost


# --- RAKE-style scoring ------------------------------------------------------

def oracle_keyphrase_scores(tokens, stopwords, max_len: int = 5):
    """Recompute candidate phrases and their degree/frequency scores."""
    runs = []
    cur = []
    for tok in list(tokens) + ["."]:
        t = tok.lower().strip(".,?")
        if not t or t in stopwords:
            if cur:
                runs.append(cur)
            cur = []
        else:
            cur.append(t)
    candidates = []
    for run in runs:
        for i in range(0, len(run), max_len):
            chunk = tuple(run[i:i + max_len])
            if chunk:
                candidates.append(chunk)
    freq: dict[str, int] = {}
    deg: dict[str, int] = {}
    for cand in candidates:
        for w in cand:
            freq[w] = freq.get(w, 0) + 1
            deg[w] = deg.get(w, 0) + len(cand)
    scores = {}
    for cand in candidates:
        if cand not in scores:
            scores[cand] = sum(Fraction(deg[w], freq[w]) for w in cand)
    return scores
