"""Consistent surrogate generation and date shifting.

Every choice is a keyed pseudorandom function of the cohort secret, the
patient and the normalized entity text, so nothing has to be stored to stay
consistent: re-running with the same secret reproduces the same output, and a
new secret re-randomizes everything.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import hashlib
import hmac
import json
import logging
import os
import random
import re
import secrets
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from . import dates
from .core import Document, Entity, Label, check_non_overlapping

log = logging.getLogger(__name__)

SECRET_ENV = "CLINPSEUDO_COHORT_SECRET"
SECRET_BYTES = 32
DEFAULT_SHIFT_RANGE = 365

NOT_REPLACED = frozenset({Label.HOSPITAL})
DATE_LABELS = frozenset({Label.DATE, Label.BIRTHDATE})
LIST_LABELS = {Label.FIRSTNAME: "FIRSTNAME", Label.LASTNAME: "LASTNAME", Label.CITY: "CITY"}
DIGIT_LABELS = frozenset({Label.PHONE, Label.ZIP, Label.SSN, Label.PATIENT_ID, Label.VISIT_ID})

AUDIT_COLUMNS = ("cohort_id", "patient_id", "label", "normalized_key", "surrogate", "rendered")


class SurrogateError(ValueError):
    pass


class MissingSecret(SurrogateError):
    pass


class EmptyPool(SurrogateError):
    def __init__(self, label):
        super().__init__(f"surrogate pool for {label} is empty")
        self.label = label


class NotReplaceable(SurrogateError):
    pass


@dataclass(frozen=True)
class CohortKey:
    cohort_id: str
    secret: bytes = field(repr=False)

    def __post_init__(self):
        if not self.cohort_id:
            raise SurrogateError("cohort_id must be non-empty")
        if not isinstance(self.secret, bytes) or len(self.secret) != SECRET_BYTES:
            raise SurrogateError(f"cohort secret must be {SECRET_BYTES} bytes")

    def __repr__(self) -> str:
        return f"CohortKey(cohort_id={self.cohort_id!r}, secret=<hidden>)"

    @classmethod
    def generate(cls, cohort_id: str) -> "CohortKey":
        return cls(cohort_id, secrets.token_bytes(SECRET_BYTES))

    @classmethod
    def from_hex(cls, cohort_id: str, text: str) -> "CohortKey":
        try:
            raw = bytes.fromhex(text.strip())
        except ValueError:
            raise SurrogateError("cohort secret is not valid hex") from None
        return cls(cohort_id, raw)

    @classmethod
    def from_env(cls, cohort_id: str, var: str = SECRET_ENV) -> "CohortKey":
        value = os.environ.get(var)
        if not value:
            raise MissingSecret(f"environment variable {var} is not set")
        return cls.from_hex(cohort_id, value)

    @classmethod
    def from_file(cls, cohort_id: str, path: str | Path) -> "CohortKey":
        try:
            text = Path(path).read_text(encoding="ascii")
        except OSError as exc:
            raise MissingSecret(f"cannot read key file {path}: {exc.strerror}") from None
        return cls.from_hex(cohort_id, text)


def prf(key: CohortKey, *parts: str) -> int:
    """HMAC-SHA256 of the unit-separated parts, as a 256-bit integer."""
    msg = "\x1f".join(parts).encode("utf-8")
    return int.from_bytes(hmac.new(key.secret, msg, hashlib.sha256).digest(), "big")


def normalize_entity_text(surface: str) -> str:
    return "".join(surface.split()).lower()


def derive_day_shift(key: CohortKey, patient_id: str, shift_range: int = DEFAULT_SHIFT_RANGE, purpose: str = "date") -> int:
    """Non-zero shift in [-shift_range, shift_range], fixed per (cohort, patient)."""
    if shift_range < 1:
        raise SurrogateError("shift range must be >= 1")
    n = prf(key, "shift", purpose, patient_id) % (2 * shift_range)
    return n - shift_range if n < shift_range else n - shift_range + 1


shift_date = dates.shift_date


# --- pools -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SurrogatePools:
    lists: dict[str, tuple[str, ...]]
    templates: dict[str, tuple[str, ...]]
    digit_templates: dict[str, tuple[str, ...]]
    fallback_date_years: tuple[int, int] = (1950, 2030)

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogatePools":
        return cls(
            lists={k: tuple(v) for k, v in d.get("lists", {}).items()},
            templates={k: tuple(v) for k, v in d.get("templates", {}).items()},
            digit_templates={Label.parse(k).value: tuple(v) for k, v in d.get("digit_templates", {}).items()},
            fallback_date_years=tuple(d.get("fallback_date_years", (1950, 2030))),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "SurrogatePools":
        if path is None:
            text = (resources.files("clinpseudo") / "data" / "pools.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def excluding(self, values: Iterable[str]) -> "SurrogatePools":
        """Drop pool entries equal (after normalization) to any real value."""
        banned = {normalize_entity_text(v) for v in values if v}
        return SurrogatePools(
            {k: tuple(v for v in vs if normalize_entity_text(v) not in banned) for k, vs in self.lists.items()},
            self.templates,
            self.digit_templates,
            self.fallback_date_years,
        )

    def pool(self, name: str, label) -> tuple[str, ...]:
        values = self.lists.get(name, ())
        if not values:
            raise EmptyPool(label)
        return values


def _to_ascii_slug(s: str) -> str:
    s = unicodedata.normalize("NFKD", s)
    s = "".join(c for c in s if not unicodedata.combining(c))
    return re.sub(r"[^a-z0-9]+", "", s.lower())


def _digit_shape(s: str) -> str:
    return re.sub(r"\d", "N", s)


def _template_shape(t: str) -> str:
    return re.sub(r"[\dP]", "N", t)


def _fill_digits(template: str, rnd: random.Random) -> str:
    out = []
    for c in template:
        if c == "N":
            out.append(str(rnd.randrange(10)))
        elif c == "P":
            out.append(str(rnd.randrange(1, 10)))
        else:
            out.append(c)
    return "".join(out)


def _template_from_surface(surface: str) -> str:
    """Fallback layout: keep separators, first digit non-zero if it was."""
    out = []
    first = True
    for c in surface:
        if c.isdigit():
            out.append("P" if first and c != "0" else ("0" if first else "N"))
            first = False
        elif c.isalpha():
            out.append(c)
        else:
            out.append(c)
    return "".join(out)


def _match_case(value: str, surface: str | None) -> str:
    if not surface:
        return value
    letters = [c for c in surface if c.isalpha()]
    if letters and all(c.isupper() for c in letters) and len(letters) > 1:
        return value.upper()
    if letters and all(c.islower() for c in letters):
        return value.lower()
    return value


def _raw_surrogate(
    key: CohortKey,
    patient_id: str,
    label: Label,
    normalized: str,
    pools: SurrogatePools,
    surface: str | None,
    attempt: int,
) -> str:
    seed = prf(key, "surrogate", patient_id, label.value, normalized, str(attempt))
    rnd = random.Random(seed)
    if label in LIST_LABELS:
        values = pools.pool(LIST_LABELS[label], label)
        return values[seed % len(values)]
    if label is Label.ADDRESS:
        streets = pools.pool("STREET", label)
        templates = pools.templates.get("ADDRESS") or ("{number} {street}",)
        t = templates[rnd.randrange(len(templates))]
        return t.format(number=rnd.randrange(1, 150), street=streets[rnd.randrange(len(streets))])
    if label is Label.EMAIL:
        firsts = pools.pool("FIRSTNAME", label)
        lasts = pools.pool("LASTNAME", label)
        domains = pools.pool("EMAIL_DOMAIN", label)
        templates = pools.templates.get("EMAIL") or ("{first}.{last}@{domain}",)
        t = templates[rnd.randrange(len(templates))]
        return t.format(
            first=_to_ascii_slug(firsts[rnd.randrange(len(firsts))]),
            last=_to_ascii_slug(lasts[rnd.randrange(len(lasts))]),
            domain=domains[rnd.randrange(len(domains))],
        )
    if label in DIGIT_LABELS:
        templates = pools.digit_templates.get(label.value, ())
        if surface is None:
            if not templates:
                raise EmptyPool(label)
            template = templates[0]
        else:
            shape = _digit_shape(surface)
            template = next((t for t in templates if _template_shape(t) == shape), None)
            if template is None:
                template = _template_from_surface(surface)
        return _fill_digits(template, rnd)
    if label in DATE_LABELS:
        lo, hi = pools.fallback_date_years
        start = dt.date(lo, 1, 1).toordinal()
        span = dt.date(hi, 12, 31).toordinal() - start + 1
        return dt.date.fromordinal(start + seed % span).strftime("%d/%m/%Y")
    raise NotReplaceable(f"{label} is never replaced")


def surrogate_for(
    key: CohortKey,
    patient_id: str,
    label: Label,
    normalized: str,
    pools: SurrogatePools,
    surface: str | None = None,
) -> str:
    """Deterministic surrogate for one (cohort, patient, label, normalized text).

    ``surface`` only steers the layout of digit strings and the letter case;
    the choice itself depends on the normalized key alone.
    """
    if label in NOT_REPLACED:
        raise NotReplaceable(f"{label} is never replaced")
    for attempt in range(64):
        value = _raw_surrogate(key, patient_id, label, normalized, pools, surface, attempt)
        if label in LIST_LABELS:
            value = _match_case(value, surface)
        if normalize_entity_text(value) != normalized:
            return value
    return value


# --- document replacement --------------------------------------------------------------


@dataclass(frozen=True)
class ReplacementRecord:
    """One replacement.  ``surrogate`` is canonical (normalized text, or the
    shifted ISO date) and depends only on the key; ``rendered`` is the exact
    string written into the document, whose case and layout follow the surface."""

    cohort_id: str
    patient_id: str
    label: str
    normalized_key: str
    surrogate: str
    rendered: str

    def row(self) -> tuple[str, ...]:
        return (self.cohort_id, self.patient_id, self.label, self.normalized_key, self.surrogate, self.rendered)


@dataclass(frozen=True)
class OffsetMap:
    """Replaced segments as (orig_begin, orig_end, new_begin, new_end), in order."""

    segments: tuple[tuple[int, int, int, int], ...] = ()

    def to_new(self, offset: int) -> int:
        """Map an original offset outside any replaced segment (or on its edge)."""
        i = bisect.bisect_right([s[0] for s in self.segments], offset) - 1
        if i < 0:
            return offset
        ob, oe, nb, ne = self.segments[i]
        if offset == ob:
            return nb
        if offset >= oe:
            return ne + (offset - oe)
        raise ValueError(f"offset {offset} falls inside replaced segment [{ob},{oe})")

    def is_identity(self) -> bool:
        return all(ob == nb and oe == ne for ob, oe, nb, ne in self.segments)

    def to_json(self) -> list[list[int]]:
        return [list(s) for s in self.segments]


class PseudoResult(NamedTuple):
    text: str
    offsets: OffsetMap
    records: list[ReplacementRecord]


@dataclass(frozen=True)
class ReplacementOptions:
    shift_range: int = DEFAULT_SHIFT_RANGE
    separate_birthdate_shift: bool = False


def _date_surrogate(
    surface: str,
    label: Label,
    key: CohortKey,
    patient_id: str,
    pools: SurrogatePools,
    opts: ReplacementOptions,
) -> tuple[str, str]:
    """Return (rendered surrogate, audit key, canonical surrogate) for a date surface."""
    parsed = dates.parse_date(surface)
    purpose = "birthdate" if (label is Label.BIRTHDATE and opts.separate_birthdate_shift) else "date"
    if parsed is not None:
        date, fmt = parsed
        shift = derive_day_shift(key, patient_id, opts.shift_range, purpose)
        try:
            shifted = dates.shift_date(date, shift)
            return fmt.render(shifted), date.isoformat(), shifted.isoformat()
        except OverflowError:
            log.warning("shifted date out of range for a %s entity; using a pool date", label.value)
    else:
        log.warning("unparseable %s surface; using a pool date", label.value)
    normalized = normalize_entity_text(surface)
    new = surrogate_for(key, patient_id, label, normalized, pools, surface)
    return new, normalized, normalize_entity_text(new)


def pseudonymize_document(
    doc: Document,
    entities: Sequence[Entity],
    key: CohortKey,
    patient_id: str,
    pools: SurrogatePools,
    opts: ReplacementOptions = ReplacementOptions(),
) -> PseudoResult:
    if not check_non_overlapping(entities):
        raise SurrogateError(f"{doc.doc_id}: entities overlap")
    text = doc.text
    pieces: list[str] = []
    segments: list[tuple[int, int, int, int]] = []
    records: list[ReplacementRecord] = []
    cursor = 0
    out_len = 0
    for e in sorted(entities, key=Entity.sort_key):
        if e.end > len(text):
            raise SurrogateError(f"{doc.doc_id}: {e} exceeds text length")
        if e.label in NOT_REPLACED:
            continue
        surface = text[e.begin:e.end]
        if e.label in DATE_LABELS:
            new, norm, canonical = _date_surrogate(surface, e.label, key, patient_id, pools, opts)
        else:
            norm = normalize_entity_text(surface)
            new = surrogate_for(key, patient_id, e.label, norm, pools, surface)
            canonical = normalize_entity_text(new)
        pieces.append(text[cursor:e.begin])
        out_len += e.begin - cursor
        segments.append((e.begin, e.end, out_len, out_len + len(new)))
        pieces.append(new)
        out_len += len(new)
        cursor = e.end
        records.append(ReplacementRecord(key.cohort_id, patient_id, e.label.value, norm, canonical, new))
    pieces.append(text[cursor:])
    return PseudoResult("".join(pieces), OffsetMap(tuple(segments)), records)


def leak_check(original: str, result: PseudoResult) -> list[tuple[int, int]]:
    """Replaced segments whose output still equals the original surface (normalized)."""
    leaks = []
    for ob, oe, nb, ne in result.offsets.segments:
        if normalize_entity_text(original[ob:oe]) == normalize_entity_text(result.text[nb:ne]):
            leaks.append((ob, oe))
    return leaks


def write_audit_csv(path: str | Path, records: Iterable[ReplacementRecord], append: bool = False) -> None:
    path = Path(path)
    new_file = not append or not path.exists() or path.stat().st_size == 0
    with open(path, "a" if append else "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new_file:
            w.writerow(AUDIT_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_audit_csv(path: str | Path) -> list[ReplacementRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [ReplacementRecord(*(row[c] for c in AUDIT_COLUMNS)) for row in csv.DictReader(fh)]
