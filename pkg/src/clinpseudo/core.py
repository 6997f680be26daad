"""Shared data model: labels, spans, tokens, documents and annotation sets.

Everything here is immutable once built so it can be handed to worker
processes without copying concerns.
"""

from __future__ import annotations

import bisect
import datetime as dt
import enum
import functools
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class Label(str, enum.Enum):
    ADDRESS = "ADDRESS"
    DATE = "DATE"
    BIRTHDATE = "BIRTHDATE"
    HOSPITAL = "HOSPITAL"
    PATIENT_ID = "PATIENT_ID"
    EMAIL = "EMAIL"
    VISIT_ID = "VISIT_ID"
    LASTNAME = "LASTNAME"
    FIRSTNAME = "FIRSTNAME"
    SSN = "SSN"
    PHONE = "PHONE"
    CITY = "CITY"
    ZIP = "ZIP"

    @classmethod
    def parse(cls, name: str) -> "Label":
        """Accept canonical names plus the alternate spellings found in annotation exports."""
        key = name.strip().upper().replace("-", "_").replace(" ", "_")
        key = _LABEL_ALIASES.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown label {name!r}") from None

    def __str__(self) -> str:
        return self.value


_LABEL_ALIASES = {
    "NSS": "SSN",
    "ZIP_CODE": "ZIP",
    "ADRESSE": "ADDRESS",
    "PATIENTID": "PATIENT_ID",
    "VISITID": "VISIT_ID",
}

LABELS: tuple[Label, ...] = tuple(Label)


class AnnotationError(ValueError):
    pass


class OutOfBounds(AnnotationError):
    def __init__(self, entity: "Entity", text_length: int):
        super().__init__(f"{entity} exceeds text length {text_length}")
        self.entity = entity


class OverlappingGold(AnnotationError):
    def __init__(self, a: "Entity", b: "Entity"):
        super().__init__(f"gold entities overlap: {a} / {b}")
        self.a = a
        self.b = b


@dataclass(frozen=True, order=True, slots=True)
class Span:
    begin: int
    end: int

    def __post_init__(self):
        if self.begin < 0 or self.begin >= self.end:
            raise ValueError(f"invalid span [{self.begin},{self.end})")

    def __len__(self) -> int:
        return self.end - self.begin


def spans_overlap(a: Span, b: Span) -> bool:
    return a.begin < b.end and b.begin < a.end


@dataclass(frozen=True, slots=True)
class Token:
    span: Span
    text: str
    is_sentence_start: bool = False

    @property
    def begin(self) -> int:
        return self.span.begin

    @property
    def end(self) -> int:
        return self.span.end


@dataclass(frozen=True, slots=True)
class Entity:
    """A labelled character span.

    Only the span and the label take part in equality; ``source``,
    ``lineage`` and ``score`` are provenance metadata.
    """

    span: Span
    label: Label
    source: str = field(default="gold", compare=False)
    lineage: tuple[str, ...] = field(default=(), compare=False)
    score: float | None = field(default=None, compare=False)

    @classmethod
    def of(cls, begin: int, end: int, label: Label | str, source: str = "gold", **kw) -> "Entity":
        if not isinstance(label, Label):
            label = Label.parse(label)
        return cls(Span(begin, end), label, source, **kw)

    @property
    def begin(self) -> int:
        return self.span.begin

    @property
    def end(self) -> int:
        return self.span.end

    def __len__(self) -> int:
        return self.span.end - self.span.begin

    def sort_key(self) -> tuple[int, int, str]:
        return (self.span.begin, self.span.end, self.label.value)

    def __str__(self) -> str:
        return f"{self.label.value}[{self.begin},{self.end})"


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    doc_type: str = "UNKNOWN"
    patient_id: str | None = None
    tokens: tuple[Token, ...] = ()

    @functools.cached_property
    def token_begins(self) -> list[int]:
        return [t.span.begin for t in self.tokens]

    @functools.cached_property
    def token_ends(self) -> list[int]:
        return [t.span.end for t in self.tokens]


@dataclass(frozen=True)
class AnnotationSet:
    doc_id: str
    entities: tuple[Entity, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.entities, key=Entity.sort_key))
        object.__setattr__(self, "entities", ordered)

    def __iter__(self):
        return iter(self.entities)

    def __len__(self) -> int:
        return len(self.entities)


@dataclass(frozen=True)
class PatientMetadata:
    patient_id: str
    first_names: tuple[str, ...] = ()
    last_names: tuple[str, ...] = ()
    birthdate: dt.date | None = None
    city: str | None = None
    zip: str | None = None
    phones: tuple[str, ...] = ()
    ssn: str | None = None
    emails: tuple[str, ...] = ()
    address: str | None = None
    internal_patient_ids: tuple[str, ...] = ()
    visit_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        if self.birthdate is not None and not isinstance(self.birthdate, dt.date):
            raise TypeError("birthdate must be a datetime.date")
        for name in ("first_names", "last_names", "phones", "emails", "internal_patient_ids", "visit_ids"):
            value = getattr(self, name)
            if isinstance(value, str):
                value = (value,)
            object.__setattr__(self, name, tuple(value))

    def values_by_label(self) -> dict[Label, tuple[str, ...]]:
        """Every non-empty identifying value, keyed by the label it would be detected as."""
        single = lambda v: (v,) if v else ()
        out = {
            Label.FIRSTNAME: self.first_names,
            Label.LASTNAME: self.last_names,
            Label.CITY: single(self.city),
            Label.ZIP: single(self.zip),
            Label.PHONE: self.phones,
            Label.SSN: single(self.ssn),
            Label.EMAIL: self.emails,
            Label.ADDRESS: single(self.address),
            Label.PATIENT_ID: self.internal_patient_ids,
            Label.VISIT_ID: self.visit_ids,
        }
        return {k: tuple(v for v in vals if v) for k, vals in out.items() if any(vals)}


def char_span_to_token_indices(doc: Document, span: Span) -> range:
    """Indices of the tokens touched by ``span``; partial coverage counts.

    Returns an empty range when the span only covers whitespace.
    """
    ends = doc.token_ends
    begins = doc.token_begins
    first = bisect.bisect_right(ends, span.begin)
    last = bisect.bisect_left(begins, span.end)
    if first >= last:
        return range(first, first)
    return range(first, last)


def token_index_ranges(doc: Document, entities: Iterable[Entity]) -> list[tuple[Entity, range]]:
    """Vectorised helper over many entities sharing one document."""
    ends = doc.token_ends
    begins = doc.token_begins
    out = []
    for e in entities:
        first = bisect.bisect_right(ends, e.span.begin)
        last = bisect.bisect_left(begins, e.span.end)
        out.append((e, range(first, max(first, last))))
    return out


def validate_annotation_set(doc: Document, annotations: AnnotationSet, *, gold: bool = True) -> AnnotationSet:
    """Check bounds (and, for gold sets, overlaps) and return the sorted set."""
    n = len(doc.text)
    ordered = sorted(annotations.entities, key=Entity.sort_key)
    for e in ordered:
        if e.end > n:
            raise OutOfBounds(e, n)
    if gold:
        for a, b in zip(ordered, ordered[1:]):
            if spans_overlap(a.span, b.span):
                raise OverlappingGold(a, b)
    return AnnotationSet(annotations.doc_id, tuple(ordered))


def check_non_overlapping(entities: Sequence[Entity]) -> bool:
    ordered = sorted(entities, key=Entity.sort_key)
    return all(a.end <= b.begin for a, b in zip(ordered, ordered[1:]))


def covered_chars(entities: Iterable[Entity]) -> set[int]:
    out: set[int] = set()
    for e in entities:
        out.update(range(e.begin, e.end))
    return out
