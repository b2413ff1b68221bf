"""System-entity detection and normalization over utterance tokens.

Each parser consumes the longest valid token prefix at a position and returns
a machine-readable value.  ``extract_entities`` scans every position with
every parser plus the loaded gazetteers and resolves overlaps by span length,
start, and a fixed type priority.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional

from .events import (
    DateValue,
    DecimalValue,
    DurationValue,
    EntityMatch,
    EntityValue,
    GazetteerValue,
    IntegerValue,
    MoneyValue,
    PercentValue,
    QuantityValue,
    SpelledValue,
    Utterance,
)

SYSTEM_ENTITY_TYPES = frozenset(
    {
        "NUMBER",
        "MONEY",
        "DATE",
        "DURATION",
        "QUANTITY",
        "VOLUME",
        "PERCENT",
        "SPELLING",
        "NAME",
        "SURNAME",
        "LOCATION",
    }
)

# Overlap-resolution priority, strongest first; user-defined types slot in at
# the USER marker, ordered alphabetically among themselves.
_PRIORITY_ORDER = (
    "MONEY",
    "DATE",
    "DURATION",
    "PERCENT",
    "QUANTITY",
    "VOLUME",
    "NUMBER",
    "SPELLING",
    "USER",
    "NAME",
    "SURNAME",
    "LOCATION",
)
_PRIORITY_RANK = {t: i for i, t in enumerate(_PRIORITY_ORDER)}

_USER_TYPE_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")


def is_valid_user_type(name: str) -> bool:
    return bool(_USER_TYPE_RE.match(name)) and name not in SYSTEM_ENTITY_TYPES


def type_priority(entity_type: str) -> tuple[int, str]:
    rank = _PRIORITY_RANK.get(entity_type)
    if rank is None:
        rank = _PRIORITY_RANK["USER"]
    return (rank, entity_type)


# --- number words ---------------------------------------------------------

_UNITS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
_TEENS = {
    "ten": 10, "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}
_SCALES = {"thousand": 1_000, "million": 1_000_000, "billion": 1_000_000_000}
_DIGIT_WORDS = {"zero": 0, "oh": 0, **_UNITS}
_INT_RE = re.compile(r"^\d+$")
_DEC_RE = re.compile(r"^\d+\.\d+$")


@dataclass(frozen=True)
class NumberParse:
    value: EntityValue  # IntegerValue or DecimalValue
    length: int

    @property
    def magnitude(self) -> Decimal:
        v = self.value
        return Decimal(v.value) if isinstance(v, IntegerValue) else v.value


def _parse_cardinal_words(tokens: list[str]) -> Optional[tuple[int, int]]:
    """Longest valid prefix of an English cardinal, as (value, tokens consumed).

    Grammar: groups of (units|teens|tens [units]) [hundred [and] small]
    joined by strictly descending scales; "and" is permitted after "hundred"
    or a scale when a number word follows.
    """
    if not tokens:
        return None
    if tokens[0] == "zero":
        return (0, 1)

    total = 0
    group = 0          # completed "X hundred" part of the current scale group
    small = 0          # in-progress sub-hundred accumulation
    small_kind: Optional[str] = None  # units | teens | tens | tens_units
    had_hundred = False
    last_scale: Optional[int] = None
    best: Optional[tuple[int, int]] = None  # (value, consumed) at last complete state

    for i, tok in enumerate(tokens):
        if tok in _UNITS:
            if small_kind is None:
                small, small_kind = _UNITS[tok], "units"
            elif small_kind == "tens":
                small, small_kind = small + _UNITS[tok], "tens_units"
            else:
                break
        elif tok in _TEENS:
            if small_kind is not None:
                break
            small, small_kind = _TEENS[tok], "teens"
        elif tok in _TENS:
            if small_kind is not None:
                break
            small, small_kind = _TENS[tok], "tens"
        elif tok == "hundred":
            if small_kind is None or had_hundred or not 1 <= small <= 99:
                break
            group, small, small_kind, had_hundred = small * 100, 0, None, True
        elif tok in _SCALES:
            scale = _SCALES[tok]
            if group + small < 1 or (last_scale is not None and scale >= last_scale):
                break
            total += (group + small) * scale
            group, small, small_kind, had_hundred = 0, 0, None, False
            last_scale = scale
        elif tok == "and":
            if small_kind is not None or not (had_hundred or total > 0):
                break
            # dangling "and" is not a complete parse; don't snapshot
            continue
        else:
            break
        best = (total + group + small, i + 1)
    return best


def parse_number(tokens: list[str]) -> Optional[NumberParse]:
    """Parse a spoken or digit number at the start of ``tokens``.

    "point" followed by digit words extends an integer into a decimal.
    Returns the longest valid parse, or None for non-numeric starts.
    """
    if not tokens:
        return None
    if _DEC_RE.match(tokens[0]):
        return NumberParse(DecimalValue(Decimal(tokens[0])), 1)
    if _INT_RE.match(tokens[0]):
        int_val, int_len = int(tokens[0]), 1
    else:
        parsed = _parse_cardinal_words(tokens)
        if parsed is None:
            return None
        int_val, int_len = parsed
    # Optional decimal tail: "point" + one digit word per fractional digit.
    if int_len < len(tokens) and tokens[int_len] == "point":
        digits = []
        j = int_len + 1
        while j < len(tokens):
            tok = tokens[j]
            if tok in _DIGIT_WORDS:
                digits.append(str(_DIGIT_WORDS[tok]))
            elif len(tok) == 1 and tok.isdigit():
                digits.append(tok)
            else:
                break
            j += 1
        if digits:
            return NumberParse(DecimalValue(Decimal(f"{int_val}.{''.join(digits)}")), j)
    return NumberParse(IntegerValue(int_val), int_len)


# --- money ---------------------------------------------------------------

DEFAULT_CURRENCY_WORDS = {
    "dollar": "USD", "dollars": "USD", "buck": "USD", "bucks": "USD",
    "euro": "EUR", "euros": "EUR",
    "pound": "GBP", "pounds": "GBP",
}
_CENT_WORDS = ("cent", "cents")


def _to_minor_units(amount: Decimal) -> int:
    return int((amount * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class MoneyParse:
    value: MoneyValue
    length: int


def parse_money(
    tokens: list[str], currency_words: Optional[dict[str, str]] = None
) -> Optional[MoneyParse]:
    """NUMBER + currency word [+ "and" + NUMBER + cents], or NUMBER + cents."""
    words = currency_words or DEFAULT_CURRENCY_WORDS
    num = parse_number(tokens)
    if num is None:
        return None
    i = num.length
    if i >= len(tokens):
        return None
    tok = tokens[i]
    if tok in _CENT_WORDS:
        return MoneyParse(MoneyValue(int(num.magnitude.to_integral_value(ROUND_HALF_UP)), "USD"), i + 1)
    currency = words.get(tok)
    if currency is None:
        return None
    minor = _to_minor_units(num.magnitude)
    length = i + 1
    # optional "and <number> cents" tail
    rest = tokens[length:]
    if len(rest) >= 3 and rest[0] == "and":
        cents = parse_number(rest[1:])
        if cents is not None:
            j = 1 + cents.length
            if j < len(rest) and rest[j] in _CENT_WORDS:
                minor += int(cents.magnitude.to_integral_value(ROUND_HALF_UP))
                length += j + 1
    return MoneyParse(MoneyValue(minor, currency), length)


# --- dates ----------------------------------------------------------------

_MONTHS = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6,
    "july": 7, "august": 8, "september": 9, "october": 10, "november": 11,
    "december": 12,
}
_WEEKDAYS = {
    "monday": 0, "tuesday": 1, "wednesday": 2, "thursday": 3,
    "friday": 4, "saturday": 5, "sunday": 6,
}
_ORDINAL_UNITS = {
    "first": 1, "second": 2, "third": 3, "fourth": 4, "fifth": 5,
    "sixth": 6, "seventh": 7, "eighth": 8, "ninth": 9,
}
_ORDINAL_TEENS = {
    "tenth": 10, "eleventh": 11, "twelfth": 12, "thirteenth": 13,
    "fourteenth": 14, "fifteenth": 15, "sixteenth": 16, "seventeenth": 17,
    "eighteenth": 18, "nineteenth": 19,
}
_ORDINAL_TENS = {"twentieth": 20, "thirtieth": 30}
_DIGIT_ORDINAL_RE = re.compile(r"^(\d{1,2})(st|nd|rd|th)$")


@dataclass(frozen=True)
class DateParse:
    value: DateValue
    length: int


def _parse_day(tokens: list[str]) -> Optional[tuple[int, int]]:
    """Day-of-month as ordinal/cardinal words or digits; longest form first."""
    if not tokens:
        return None
    if len(tokens) >= 2 and tokens[0] in _TENS and tokens[1] in _ORDINAL_UNITS:
        day = _TENS[tokens[0]] + _ORDINAL_UNITS[tokens[1]]
        if day <= 31:
            return (day, 2)
    if len(tokens) >= 2 and tokens[0] in _TENS and tokens[1] in _UNITS:
        day = _TENS[tokens[0]] + _UNITS[tokens[1]]
        if day <= 31:
            return (day, 2)
    tok = tokens[0]
    for table in (_ORDINAL_UNITS, _ORDINAL_TEENS, _ORDINAL_TENS, _TEENS, _TENS, _UNITS):
        if tok in table and table[tok] <= 31:
            return (table[tok], 1)
    m = _DIGIT_ORDINAL_RE.match(tok)
    if m and 1 <= int(m.group(1)) <= 31:
        return (int(m.group(1)), 1)
    if _INT_RE.match(tok) and 1 <= int(tok) <= 31:
        return (int(tok), 1)
    return None


def _parse_year(tokens: list[str]) -> Optional[tuple[int, int]]:
    if not tokens:
        return None
    if _INT_RE.match(tokens[0]) and 1000 <= int(tokens[0]) <= 2999:
        return (int(tokens[0]), 1)
    cardinal = _parse_cardinal_words(tokens)
    if cardinal is not None and 1000 <= cardinal[0] <= 2999:
        return cardinal
    # Spoken pair form: "twenty twenty five" = 2025, "nineteen ninety nine" = 1999.
    for first_len in (2, 1):
        head = _parse_cardinal_words(tokens[:first_len])
        if head is None or head[1] != first_len or not 10 <= head[0] <= 99:
            continue
        tail = _parse_cardinal_words(tokens[first_len:])
        if tail is None or not 0 <= tail[0] <= 99:
            continue
        year = head[0] * 100 + tail[0]
        if 1000 <= year <= 2999:
            return (year, first_len + tail[1])
    return None


def parse_date(tokens: list[str], reference: dt.date) -> Optional[DateParse]:
    """Absolute (month day [year]) and relative date forms.

    Relative forms resolve against ``reference``; a missing year defaults to
    the reference year.  Impossible calendar dates fail to parse.
    """
    if not tokens:
        return None
    tok = tokens[0]
    if tok == "today":
        return DateParse(DateValue(reference.isoformat()), 1)
    if tok == "tomorrow":
        return DateParse(DateValue((reference + dt.timedelta(days=1)).isoformat()), 1)
    if tok == "yesterday":
        return DateParse(DateValue((reference - dt.timedelta(days=1)).isoformat()), 1)
    if tok in ("next", "last") and len(tokens) >= 2 and tokens[1] in _WEEKDAYS:
        target = _WEEKDAYS[tokens[1]]
        if tok == "next":
            ahead = (target - reference.weekday()) % 7 or 7
            return DateParse(DateValue((reference + dt.timedelta(days=ahead)).isoformat()), 2)
        back = (reference.weekday() - target) % 7 or 7
        return DateParse(DateValue((reference - dt.timedelta(days=back)).isoformat()), 2)
    month = _MONTHS.get(tok)
    if month is None:
        return None
    day = _parse_day(tokens[1:])
    if day is None:
        return None
    length = 1 + day[1]
    year = _parse_year(tokens[length:])
    if year is not None:
        length += year[1]
    try:
        value = dt.date(year[0] if year else reference.year, month, day[0])
    except ValueError:
        return None
    return DateParse(DateValue(value.isoformat()), length)


# --- durations / percent / quantities --------------------------------------

_TIME_UNITS = {
    "second": 1, "seconds": 1,
    "minute": 60, "minutes": 60,
    "hour": 3600, "hours": 3600,
    "day": 86400, "days": 86400,
    "week": 604800, "weeks": 604800,
}
DEFAULT_VOLUME_UNITS = {
    "liter": "liters", "liters": "liters", "litre": "liters", "litres": "liters",
    "gallon": "gallons", "gallons": "gallons",
    "milliliter": "milliliters", "milliliters": "milliliters",
    "pint": "pints", "pints": "pints",
    "quart": "quarts", "quarts": "quarts",
}
DEFAULT_QUANTITY_UNITS = {
    "item": "items", "items": "items",
    "unit": "units", "units": "units",
    "piece": "pieces", "pieces": "pieces",
    "box": "boxes", "boxes": "boxes",
    "pack": "packs", "packs": "packs",
    "copy": "copies", "copies": "copies",
}


@dataclass(frozen=True)
class MeasureParse:
    entity_type: str  # DURATION | PERCENT | QUANTITY | VOLUME
    value: EntityValue
    length: int


def parse_duration_percent_quantity(
    tokens: list[str],
    quantity_units: Optional[dict[str, str]] = None,
    volume_units: Optional[dict[str, str]] = None,
) -> Optional[MeasureParse]:
    """NUMBER + unit: time units, "percent", or configured measure units."""
    qty = quantity_units if quantity_units is not None else DEFAULT_QUANTITY_UNITS
    vol = volume_units if volume_units is not None else DEFAULT_VOLUME_UNITS
    num = parse_number(tokens)
    if num is None or num.length >= len(tokens):
        return None
    unit = tokens[num.length]
    length = num.length + 1
    if unit in _TIME_UNITS:
        seconds = (num.magnitude * _TIME_UNITS[unit]).to_integral_value(ROUND_HALF_UP)
        return MeasureParse("DURATION", DurationValue(int(seconds)), length)
    if unit == "percent":
        return MeasureParse("PERCENT", PercentValue(num.magnitude), length)
    if unit in vol:
        return MeasureParse("VOLUME", QuantityValue(num.magnitude, vol[unit]), length)
    if unit in qty:
        return MeasureParse("QUANTITY", QuantityValue(num.magnitude, qty[unit]), length)
    return None


# --- spelling ---------------------------------------------------------------

NATO_ALPHABET = {
    "alpha": "a", "bravo": "b", "charlie": "c", "delta": "d", "echo": "e",
    "foxtrot": "f", "golf": "g", "hotel": "h", "india": "i", "juliet": "j",
    "juliett": "j", "kilo": "k", "lima": "l", "mike": "m", "november": "n",
    "oscar": "o", "papa": "p", "quebec": "q", "romeo": "r", "sierra": "s",
    "tango": "t", "uniform": "u", "victor": "v", "whiskey": "w", "xray": "x",
    "yankee": "y", "zulu": "z",
}
MIN_SPELLING_RUN = 3


@dataclass(frozen=True)
class SpellingParse:
    value: SpelledValue
    length: int


def _spelled_letter(token: str) -> Optional[str]:
    if len(token) == 1 and token.isalpha():
        return token
    return NATO_ALPHABET.get(token)


def parse_spelling(tokens: list[str]) -> Optional[SpellingParse]:
    """A run of single letters and/or phonetic-alphabet words, length >= 3.

    "as in X" appositions directly after a letter are skipped and contribute
    nothing: "b as in bravo o b" spells "bob".
    """
    letters: list[str] = []
    i = 0
    while i < len(tokens):
        letter = _spelled_letter(tokens[i])
        if letter is None:
            break
        letters.append(letter)
        i += 1
        if tokens[i:i + 2] == ["as", "in"] and i + 2 < len(tokens):
            i += 3
    if len(letters) < MIN_SPELLING_RUN:
        return None
    return SpellingParse(SpelledValue("".join(letters)), i)


def spelling_run_starts_at(tokens: list[str], i: int) -> bool:
    """True when position i cannot be the interior of a longer spelling run."""
    if _spelled_letter(tokens[i]) is None:
        return False
    if i == 0:
        return True
    if _spelled_letter(tokens[i - 1]) is not None:
        return False
    # the X of a preceding letter's "as in X" apposition
    if i >= 3 and tokens[i - 2:i] == ["as", "in"] and _spelled_letter(tokens[i - 3]) is not None:
        return False
    # the first letter after such an apposition
    if i >= 4 and tokens[i - 3:i - 1] == ["as", "in"] and _spelled_letter(tokens[i - 4]) is not None:
        return False
    return True


# --- gazetteers --------------------------------------------------------------

class Gazetteer:
    """One entity type's phrase set with canonical forms."""

    def __init__(self, entity_type: str, entries: Optional[dict[str, str]] = None):
        self.entity_type = entity_type
        self._phrases: dict[tuple[str, ...], str] = {}
        self._max_len = 0
        for phrase, canonical in (entries or {}).items():
            self.add(phrase, canonical)

    def add(self, phrase: str, canonical: Optional[str] = None) -> None:
        phrase = phrase.strip()
        if not phrase:
            raise ValueError("gazetteer phrase must be non-empty")
        if phrase != phrase.lower():
            raise ValueError(f"gazetteer phrase {phrase!r} must be lowercase")
        key = tuple(phrase.split())
        self._phrases[key] = canonical if canonical is not None else phrase
        self._max_len = max(self._max_len, len(key))

    def match(self, tokens: list[str], i: int) -> Optional[tuple[str, int]]:
        """Longest phrase matching at position i, as (canonical, length)."""
        limit = min(self._max_len, len(tokens) - i)
        for n in range(limit, 0, -1):
            key = tuple(tokens[i:i + n])
            if key in self._phrases:
                return (self._phrases[key], n)
        return None

    def __len__(self) -> int:
        return len(self._phrases)

    def entries(self) -> list[tuple[tuple[str, ...], str]]:
        return sorted(self._phrases.items())

    @classmethod
    def load_file(cls, entity_type: str, path: str | Path) -> "Gazetteer":
        gaz = cls(entity_type)
        gaz.load_into(path)
        return gaz

    def load_into(self, path: str | Path) -> None:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "\t" in line:
                phrase, canonical = line.split("\t", 1)
                self.add(phrase.strip(), canonical.strip())
            else:
                self.add(line)


def load_gazetteer_dir(root: str | Path) -> dict[str, Gazetteer]:
    """Load a directory tree: one subdirectory per entity type, files inside."""
    out: dict[str, Gazetteer] = {}
    root = Path(root)
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        etype = sub.name.upper()
        gaz = Gazetteer(etype)
        for f in sorted(sub.iterdir()):
            if f.is_file():
                gaz.load_into(f)
        if len(gaz):
            out[etype] = gaz
    return out


# --- extraction --------------------------------------------------------------

@dataclass
class EntityConfig:
    currency_words: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CURRENCY_WORDS))
    quantity_units: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_QUANTITY_UNITS))
    volume_units: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_VOLUME_UNITS))
    gazetteers: dict[str, Gazetteer] = field(default_factory=dict)


@dataclass(frozen=True)
class _Candidate:
    entity_type: str
    start: int
    end: int  # inclusive token index
    value: EntityValue

    @property
    def span_len(self) -> int:
        return self.end - self.start + 1


def candidate_entities(tokens: list[str], reference: dt.date, cfg: EntityConfig) -> list[_Candidate]:
    """All longest-match entity candidates at every token position."""
    out: list[_Candidate] = []
    for i in range(len(tokens)):
        rest = tokens[i:]
        money = parse_money(rest, cfg.currency_words)
        if money:
            out.append(_Candidate("MONEY", i, i + money.length - 1, money.value))
        date = parse_date(rest, reference)
        if date:
            out.append(_Candidate("DATE", i, i + date.length - 1, date.value))
        measure = parse_duration_percent_quantity(rest, cfg.quantity_units, cfg.volume_units)
        if measure:
            out.append(_Candidate(measure.entity_type, i, i + measure.length - 1, measure.value))
        number = parse_number(rest)
        if number:
            out.append(_Candidate("NUMBER", i, i + number.length - 1, number.value))
        if spelling_run_starts_at(tokens, i):
            spelling = parse_spelling(rest)
            if spelling:
                out.append(_Candidate("SPELLING", i, i + spelling.length - 1, spelling.value))
        for etype in sorted(cfg.gazetteers):
            hit = cfg.gazetteers[etype].match(tokens, i)
            if hit:
                out.append(_Candidate(etype, i, i + hit[1] - 1, GazetteerValue(hit[0])))
    return out


def resolve_overlaps(candidates: list[_Candidate]) -> list[_Candidate]:
    """Longer span wins, then earlier start, then type priority; survivors
    are pairwise disjoint and returned sorted by start."""
    ranked = sorted(
        candidates,
        key=lambda c: (-c.span_len, c.start, type_priority(c.entity_type)),
    )
    chosen: list[_Candidate] = []
    for cand in ranked:
        if all(cand.end < c.start or cand.start > c.end for c in chosen):
            chosen.append(cand)
    return sorted(chosen, key=lambda c: c.start)


def extract_entities(
    utterance: Utterance,
    cfg: EntityConfig,
    reference: dt.date,
) -> list[EntityMatch]:
    """Non-overlapping entity matches for one finalized utterance."""
    tokens = [w.text.lower() for w in utterance.words]
    survivors = resolve_overlaps(candidate_entities(tokens, reference, cfg))
    matches = []
    for c in survivors:
        words = utterance.words[c.start:c.end + 1]
        matches.append(
            EntityMatch(
                type=c.entity_type,
                speaker=utterance.speaker,
                first_seq=words[0].seq,
                last_seq=words[-1].seq,
                raw_text=" ".join(w.text for w in words),
                value=c.value,
            )
        )
    return matches
