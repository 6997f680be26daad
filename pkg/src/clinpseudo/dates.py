"""Parsing date surfaces into calendar dates and rendering them back in the same layout."""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass

# (canonical full name, accepted spellings); index + 1 == month number
MONTHS: tuple[tuple[str, ...], ...] = (
    ("janvier", "janv", "jan"),
    ("février", "fevrier", "févr", "fevr", "fév", "fev"),
    ("mars", "mar"),
    ("avril", "avr"),
    ("mai",),
    ("juin",),
    ("juillet", "juil"),
    ("août", "aout", "aoû"),
    ("septembre", "sept", "sep"),
    ("octobre", "oct"),
    ("novembre", "nov"),
    ("décembre", "decembre", "déc", "dec"),
)

_MONTH_LOOKUP = {name: (i + 1, j) for i, names in enumerate(MONTHS) for j, name in enumerate(names)}

MONTH_ALTERNATION = "|".join(
    sorted({re.escape(n) for names in MONTHS for n in names}, key=len, reverse=True)
)

_NUMERIC = re.compile(r"^(\d{1,2})([/.\-])(\d{1,2})\2(\d{4}|\d{2})$")
_ISO = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_SPELLED = re.compile(
    rf"^(1er|\d{{1,2}})(\s*)({MONTH_ALTERNATION})(\.?)(?:(\s*)(\d{{4}}))?$", re.IGNORECASE
)

TWO_DIGIT_PIVOT = 30


def _case_of(word: str) -> str:
    if word.isupper():
        return "upper"
    if word[:1].isupper():
        return "title"
    return "lower"


def _apply_case(word: str, case: str) -> str:
    if case == "upper":
        return word.upper()
    if case == "title":
        return word[:1].upper() + word[1:]
    return word


@dataclass(frozen=True)
class DateFormat:
    kind: str  # numeric | iso | spelled
    sep: str = "/"
    day_width: int = 2
    month_width: int = 2
    year_digits: int = 4
    month_variant: int = 0
    month_case: str = "lower"
    gap1: str = " "
    dot: str = ""
    gap2: str = " "
    first_style: bool = False

    def render(self, date: dt.date) -> str:
        if self.kind == "iso":
            return date.isoformat()
        year = str(date.year) if self.year_digits == 4 else f"{date.year % 100:02d}"
        if self.kind == "numeric":
            day = str(date.day).zfill(self.day_width)
            month = str(date.month).zfill(self.month_width)
            return f"{day}{self.sep}{month}{self.sep}{year}"
        names = MONTHS[date.month - 1]
        month = _apply_case(names[min(self.month_variant, len(names) - 1)], self.month_case)
        if self.first_style and date.day == 1:
            day = "1er"
        else:
            day = str(date.day).zfill(self.day_width)
        out = f"{day}{self.gap1}{month}{self.dot}"
        if self.year_digits:
            out += f"{self.gap2}{year}"
        return out


def _expand_year(raw: str) -> int:
    y = int(raw)
    if len(raw) == 2:
        y += 2000 if y <= TWO_DIGIT_PIVOT else 1900
    return y


def parse_date(surface: str) -> tuple[dt.date, DateFormat] | None:
    """Return the calendar date and its layout, or None when the surface is not a full date."""
    s = surface.strip()
    m = _NUMERIC.match(s)
    if m:
        d, sep, mo, y = m.groups()
        try:
            date = dt.date(_expand_year(y), int(mo), int(d))
        except ValueError:
            return None
        return date, DateFormat("numeric", sep, len(d), len(mo), len(y))
    m = _ISO.match(s)
    if m:
        try:
            date = dt.date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
        except ValueError:
            return None
        return date, DateFormat("iso")
    m = _SPELLED.match(s)
    if m:
        d, gap1, month_word, dot, gap2, y = m.groups()
        if y is None:
            return None
        key = month_word.lower()
        month, variant = _MONTH_LOOKUP[key]
        day = 1 if d.lower() == "1er" else int(d)
        try:
            date = dt.date(int(y), month, day)
        except ValueError:
            return None
        fmt = DateFormat(
            "spelled",
            day_width=1 if d.lower() == "1er" else len(d),
            year_digits=4,
            month_variant=variant,
            month_case=_case_of(month_word),
            gap1=gap1,
            dot=dot,
            gap2=gap2 or "",
            first_style=d.lower() == "1er",
        )
        return date, fmt
    return None


def shift_date(date: dt.date, days: int) -> dt.date:
    """Calendar-correct shift; raises OverflowError outside the representable range."""
    return date + dt.timedelta(days=days)

