"""Static (regex / gazetteer) and dynamic (patient metadata) identifier detection.

Rule identifiers follow the ``<LABEL>_<KIND>`` convention, e.g. ``PHONE_STATIC``
or ``LASTNAME_DYNAMIC``.  The first and last name static rules are a single
joint rule, ``NAME_STATIC``.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from . import dates
from .core import Document, Entity, Label, PatientMetadata, Span, spans_overlap

STATIC = "static"
DYNAMIC = "dynamic"


class RuleError(ValueError):
    pass


class MissingRule(RuleError):
    def __init__(self, rule_id: "RuleId"):
        super().__init__(f"no precision entry for rule {rule_id}")
        self.rule_id = rule_id


@dataclass(frozen=True, order=True)
class RuleId:
    label: str  # a Label name, or "NAME" for the joint first/last name rule
    kind: str

    def __post_init__(self):
        if (self.label, self.kind) not in _VALID_CELLS:
            raise RuleError(f"no {self.kind} rule for {self.label}")

    def __str__(self) -> str:
        return f"{self.label}_{self.kind.upper()}"

    @classmethod
    def parse(cls, name: "str | RuleId") -> "RuleId":
        if isinstance(name, RuleId):
            return name
        head, _, kind = name.strip().upper().rpartition("_")
        if kind not in ("STATIC", "DYNAMIC") or not head:
            raise RuleError(f"malformed rule id {name!r}")
        if head != "NAME":
            head = Label.parse(head).value
        return cls(head, kind.lower())

    @property
    def labels(self) -> tuple[Label, ...]:
        if self.label == "NAME":
            return (Label.FIRSTNAME, Label.LASTNAME)
        return (Label(self.label),)


# order matters: it breaks ties between equally long hits (BIRTHDATE beats DATE)
_STATIC_LABELS = (
    "BIRTHDATE", "DATE", "HOSPITAL", "EMAIL", "VISIT_ID", "PHONE", "SSN",
    "NAME", "ADDRESS", "ZIP", "CITY",
)
_DYNAMIC_LABELS = (
    "BIRTHDATE", "PATIENT_ID", "EMAIL", "VISIT_ID", "PHONE", "SSN",
    "LASTNAME", "FIRSTNAME", "ADDRESS", "CITY", "ZIP",
)
_VALID_CELLS = {(l, STATIC) for l in _STATIC_LABELS} | {(l, DYNAMIC) for l in _DYNAMIC_LABELS}

STATIC_RULES: tuple[RuleId, ...] = tuple(RuleId(l, STATIC) for l in _STATIC_LABELS)
DYNAMIC_RULES: tuple[RuleId, ...] = tuple(RuleId(l, DYNAMIC) for l in _DYNAMIC_LABELS)
ALL_RULES: tuple[RuleId, ...] = STATIC_RULES + DYNAMIC_RULES
_RULE_ORDER = {r: i for i, r in enumerate(ALL_RULES)}

NAME_STATIC = RuleId("NAME", STATIC)


@dataclass(frozen=True)
class Gazetteer:
    name: str
    entries: frozenset[str]
    match_mode: str = "case-insensitive"
    regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise RuleError(f"gazetteer {self.name} is empty")
        if any(not e.strip() for e in self.entries):
            raise RuleError(f"gazetteer {self.name} has a blank entry")
        if self.match_mode not in ("exact", "case-insensitive"):
            raise RuleError(f"unknown match mode {self.match_mode!r}")
        alternation = "|".join(re.escape(e) for e in sorted(self.entries, key=lambda s: (-len(s), s)))
        flags = re.IGNORECASE if self.match_mode == "case-insensitive" else 0
        object.__setattr__(self, "regex", re.compile(rf"(?<!\w)(?:{alternation})(?!\w)", flags))

    @classmethod
    def from_file(cls, name: str, path: str | Path, match_mode: str = "case-insensitive") -> "Gazetteer":
        with open(path, encoding="utf-8") as fh:
            entries = frozenset(line.strip() for line in fh if line.strip())
        return cls(name, entries, match_mode)


@dataclass(frozen=True)
class StaticPattern:
    rule: RuleId
    regex: re.Pattern
    label: Label | None = None
    groups: tuple[tuple[str, Label, RuleId], ...] = ()


@dataclass(frozen=True)
class RuleSet:
    patterns: tuple[StaticPattern, ...]
    gazetteers: Mapping[Label, Gazetteer]
    name_regex: re.Pattern
    birth_patterns: tuple[str, ...]
    birthdate_window: int = 5
    dynamic_modes: Mapping[Label, str] = field(default_factory=dict)
    min_dynamic_length: int = 2

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Path | None = None) -> "RuleSet":
        frags = cfg.get("fragments", {})

        def expand(rx: str) -> str:
            for k, v in frags.items():
                rx = rx.replace(f"<{k}>", v)
            return rx

        patterns = []
        for spec in cfg.get("static_patterns", []):
            rule = RuleId.parse(spec["rule"])
            flags = re.IGNORECASE if "i" in spec.get("flags", "") else 0
            try:
                rx = re.compile(expand(spec["regex"]), flags)
            except re.error as exc:
                raise RuleError(f"bad pattern for {rule}: {exc}") from exc
            groups = tuple(
                (g, Label.parse(g), RuleId.parse(r)) for g, r in spec.get("groups", {}).items()
            )
            for g, _, _ in groups:
                if g not in rx.groupindex:
                    raise RuleError(f"pattern for {rule} lacks group {g}")
            label = Label.parse(spec["label"]) if "label" in spec else None
            if label is None and not groups:
                raise RuleError(f"pattern for {rule} needs a label or groups")
            patterns.append(StaticPattern(rule, rx, label, groups))

        prefixes = "|".join(cfg["name_prefixes"])
        word = cfg["name_word"]
        name_regex = re.compile(
            rf"(?<![\w])(?:{prefixes})\s+(?P<names>(?:{word})(?:\s+(?:{word})){{0,2}})(?![\w])"
        )

        gazetteers = {}
        for label_name, g in cfg.get("gazetteers", {}).items():
            label = Label.parse(label_name)
            if "entries" in g:
                gazetteers[label] = Gazetteer(label_name, frozenset(g["entries"]), g.get("match_mode", "case-insensitive"))
            else:
                path = Path(g["path"])
                if not path.is_absolute():
                    if base_dir is None:
                        path = Path(str(resources.files("clinpseudo") / "data" / g["path"]))
                    else:
                        path = base_dir / path
                gazetteers[label] = Gazetteer.from_file(label_name, path, g.get("match_mode", "case-insensitive"))

        modes = {Label.parse(k): v for k, v in cfg.get("dynamic_modes", {}).items()}
        for m in modes.values():
            if m not in ("strict", "lowercase"):
                raise RuleError(f"unknown dynamic matching mode {m!r}")
        return cls(
            patterns=tuple(patterns),
            gazetteers=gazetteers,
            name_regex=name_regex,
            birth_patterns=tuple(p.lower() for p in cfg.get("birth_patterns", ())),
            birthdate_window=int(cfg.get("birthdate_window", 5)),
            dynamic_modes=modes,
            min_dynamic_length=int(cfg.get("min_dynamic_length", 2)),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RuleSet":
        if path is None:
            text = (resources.files("clinpseudo") / "data" / "rules.json").read_text(encoding="utf-8")
            return cls.from_dict(json.loads(text))
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    @property
    def defined_rules(self) -> frozenset[RuleId]:
        out = {p.rule for p in self.patterns}
        out |= {r for p in self.patterns for _, _, r in p.groups}
        out |= {RuleId(l.value, STATIC) for l in self.gazetteers}
        out.add(NAME_STATIC)
        if self.birth_patterns:
            out.add(RuleId("BIRTHDATE", STATIC))
        out.add(RuleId("BIRTHDATE", DYNAMIC))
        out |= {RuleId(l.value, DYNAMIC) for l in self.dynamic_modes}
        return frozenset(out)


_DEFAULT_RULES: RuleSet | None = None


def default_rules() -> RuleSet:
    global _DEFAULT_RULES
    if _DEFAULT_RULES is None:
        _DEFAULT_RULES = RuleSet.load()
    return _DEFAULT_RULES


def _aligned(doc: Document, begin: int, end: int) -> bool:
    if not doc.tokens:
        return True
    return begin in _token_begin_set(doc) and end in _token_end_set(doc)


def _token_begin_set(doc: Document) -> frozenset[int]:
    cache = doc.__dict__.get("_begin_set")
    if cache is None:
        cache = frozenset(doc.token_begins)
        doc.__dict__["_begin_set"] = cache
    return cache


def _token_end_set(doc: Document) -> frozenset[int]:
    cache = doc.__dict__.get("_end_set")
    if cache is None:
        cache = frozenset(doc.token_ends)
        doc.__dict__["_end_set"] = cache
    return cache


def _rule_entity(begin: int, end: int, label: Label, rule: RuleId) -> Entity:
    return Entity(Span(begin, end), label, f"rule:{rule}")


def _date_matches(doc: Document, rules: RuleSet) -> list[tuple[int, int]]:
    out = []
    for p in rules.patterns:
        if p.rule.label != "DATE":
            continue
        for m in p.regex.finditer(doc.text):
            if _aligned(doc, m.start(), m.end()):
                out.append((m.start(), m.end()))
    return sorted(set(out))


def _near_birth_pattern(doc: Document, begin: int, end: int, rules: RuleSet) -> bool:
    """True when a birth expression sits within ``birthdate_window`` tokens of the span."""
    import bisect

    tokens = doc.tokens
    if not tokens:
        context = doc.text.lower()
    else:
        w = rules.birthdate_window
        first = bisect.bisect_right(doc.token_ends, begin)
        last = bisect.bisect_left(doc.token_begins, end)
        lo = tokens[max(0, first - w)].begin if first > 0 else begin
        hi = tokens[min(len(tokens) - 1, last + w - 1)].end if last < len(tokens) else end
        context = doc.text[lo:begin].lower() + " " + doc.text[end:hi].lower()
    return any(p in context for p in rules.birth_patterns)


def _split_names(text: str, offset: int) -> list[tuple[int, int, Label]]:
    words = [(m.start() + offset, m.end() + offset, m.group()) for m in re.finditer(r"\S+", text)]
    has_caps = any(w.isupper() and len(w) > 1 for _, _, w in words)
    out = []
    for i, (b, e, w) in enumerate(words):
        if has_caps:
            label = Label.LASTNAME if (w.isupper() and len(w) > 1) else Label.FIRSTNAME
        else:
            label = Label.LASTNAME if i == len(words) - 1 else Label.FIRSTNAME
        out.append((b, e, label))
    return out


def apply_static_rules(doc: Document, rules: RuleSet, enabled: Iterable[RuleId] | None = None) -> list[Entity]:
    """Regex, gazetteer and prefix rules.  Returned hits may overlap; see :func:`resolve_overlaps`."""
    on = set(rules.defined_rules if enabled is None else enabled)
    text = doc.text
    out: list[Entity] = []

    for p in rules.patterns:
        if p.groups:
            wanted = [(g, lab, r) for g, lab, r in p.groups if r in on]
            if not wanted:
                continue
            for m in p.regex.finditer(text):
                for g, lab, r in wanted:
                    b, e = m.span(g)
                    if b >= 0 and e > b and _aligned(doc, b, e):
                        out.append(_rule_entity(b, e, lab, r))
        elif p.rule in on:
            for m in p.regex.finditer(text):
                if _aligned(doc, m.start(), m.end()):
                    out.append(_rule_entity(m.start(), m.end(), p.label, p.rule))

    birth_rule = RuleId("BIRTHDATE", STATIC)
    if birth_rule in on and rules.birth_patterns:
        for b, e in _date_matches(doc, rules):
            if _near_birth_pattern(doc, b, e, rules):
                out.append(_rule_entity(b, e, Label.BIRTHDATE, birth_rule))

    for label, gaz in rules.gazetteers.items():
        rule = RuleId(label.value, STATIC)
        if rule not in on:
            continue
        for m in gaz.regex.finditer(text):
            if _aligned(doc, m.start(), m.end()):
                out.append(_rule_entity(m.start(), m.end(), label, rule))

    if NAME_STATIC in on:
        for m in rules.name_regex.finditer(text):
            for b, e, lab in _split_names(m.group("names"), m.start("names")):
                if _aligned(doc, b, e):
                    out.append(_rule_entity(b, e, lab, NAME_STATIC))
    return out


def apply_dynamic_rules(
    doc: Document,
    meta: PatientMetadata,
    rules: RuleSet,
    enabled: Iterable[RuleId] | None = None,
) -> list[Entity]:
    """Find the patient's own identifiers in the text.

    ``strict`` values match case-sensitively, ``lowercase`` values
    case-insensitively; both must start and end on token boundaries.
    """
    on = set(rules.defined_rules if enabled is None else enabled)
    text = doc.text
    out: list[Entity] = []
    for label, values in meta.values_by_label().items():
        rule = RuleId(label.value, DYNAMIC)
        mode = rules.dynamic_modes.get(label)
        if rule not in on or mode is None:
            continue
        flags = re.IGNORECASE if mode == "lowercase" else 0
        for value in sorted(set(values)):
            value = value.strip()
            if len(value) < rules.min_dynamic_length:
                continue
            for m in re.finditer(re.escape(value), text, flags):
                if _aligned(doc, m.start(), m.end()):
                    out.append(_rule_entity(m.start(), m.end(), label, rule))

    birth_rule = RuleId("BIRTHDATE", DYNAMIC)
    if meta.birthdate is not None and birth_rule in on:
        for b, e in _date_matches(doc, rules):
            parsed = dates.parse_date(text[b:e])
            if parsed is not None and parsed[0] == meta.birthdate:
                out.append(_rule_entity(b, e, Label.BIRTHDATE, birth_rule))
    return out


def _rule_of(e: Entity) -> RuleId:
    return RuleId.parse(e.source.split(":", 1)[1])


_HOSPITAL_SHADOWED = (Label.CITY, Label.LASTNAME, Label.FIRSTNAME)


def resolve_overlaps(hits: list[Entity]) -> list[Entity]:
    """Longest hit wins; ties go to dynamic rules, then to the canonical rule order.

    Name and city hits overlapping a hospital hit are dropped first.
    """
    hospitals = [e for e in hits if e.label is Label.HOSPITAL]
    if hospitals:
        hits = [
            e for e in hits
            if e.label not in _HOSPITAL_SHADOWED or not any(spans_overlap(e.span, h.span) for h in hospitals)
        ]

    def priority(e: Entity):
        rule = _rule_of(e)
        return (-len(e), 0 if rule.kind == DYNAMIC else 1, _RULE_ORDER[rule], e.begin, e.label.value)

    kept: list[Entity] = []
    for e in sorted(set_unique(hits), key=priority):
        if not any(spans_overlap(e.span, k.span) for k in kept):
            kept.append(e)
    return sorted(kept, key=Entity.sort_key)


def set_unique(hits: list[Entity]) -> list[Entity]:
    seen = set()
    out = []
    for e in hits:
        key = (e.begin, e.end, e.label, e.source)
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


def run_rule_pipeline(
    doc: Document,
    meta: PatientMetadata | None,
    rules: RuleSet,
    enabled: Iterable[RuleId] | None = None,
) -> list[Entity]:
    enabled = frozenset(rules.defined_rules if enabled is None else enabled)
    hits = apply_static_rules(doc, rules, enabled)
    if meta is not None:
        hits += apply_dynamic_rules(doc, meta, rules, enabled)
    return resolve_overlaps(hits)


# --- precision reports and gating -------------------------------------------------------


@dataclass(frozen=True)
class RuleScore:
    precision: float
    recall: float
    f1: float

    def __post_init__(self):
        for v in (self.precision, self.recall, self.f1):
            if not 0.0 <= v <= 100.0:
                raise RuleError(f"score {v} outside [0, 100]")


RulePrecisionReport = dict  # str rule key -> RuleScore


def _report_key(key: str) -> str:
    head, _, kind = key.strip().upper().rpartition("_")
    if head in ("FIRSTNAME", "LASTNAME", "NAME"):
        return f"{head}_{kind}"
    return str(RuleId.parse(key))


def gate_rules(
    report: Mapping[str, RuleScore],
    threshold: float = 98.0,
    candidates: Iterable[RuleId | str] | None = None,
) -> frozenset[RuleId]:
    """Keep the rules whose development precision reaches ``threshold`` (in percent).

    The joint ``NAME_STATIC`` rule is judged on the worse of its first-name
    and last-name precisions.  ``candidates`` defaults to every rule the
    report mentions.
    """
    scores = {_report_key(k): v for k, v in report.items()}

    def precision_of(rule: RuleId) -> float:
        if rule == NAME_STATIC:
            if "NAME_STATIC" in scores:
                return scores["NAME_STATIC"].precision
            parts = [scores.get("FIRSTNAME_STATIC"), scores.get("LASTNAME_STATIC")]
            if any(p is None for p in parts):
                raise MissingRule(rule)
            return min(p.precision for p in parts)
        key = str(rule)
        if key not in scores:
            raise MissingRule(rule)
        return scores[key].precision

    if candidates is None:
        cands = set()
        for k in scores:
            if k in ("FIRSTNAME_STATIC", "LASTNAME_STATIC"):
                cands.add(NAME_STATIC)
            else:
                cands.add(RuleId.parse(k))
    else:
        cands = {RuleId.parse(c) for c in candidates}
    return frozenset(r for r in cands if precision_of(r) >= threshold)


def write_report_csv(path: str | Path, report: Mapping[str, RuleScore]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rule_id", "precision", "recall", "f1"])
        for key in sorted(report):
            s = report[key]
            w.writerow([key, f"{s.precision:.1f}", f"{s.recall:.1f}", f"{s.f1:.1f}"])


def read_report_csv(path: str | Path) -> dict[str, RuleScore]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {
            row["rule_id"]: RuleScore(float(row["precision"]), float(row["recall"]), float(row["f1"]))
            for row in csv.DictReader(fh)
        }


def rule_precision_report(
    items: Iterable[tuple[Document, Iterable[Entity], PatientMetadata | None]],
    rules: RuleSet,
) -> dict[str, RuleScore]:
    """Score every rule in isolation against gold entities (exact span and label).

    The joint name rule is reported per label as ``FIRSTNAME_STATIC`` and
    ``LASTNAME_STATIC``.  A rule that fires nowhere gets precision 100.
    """
    counts: dict[str, list[int]] = {}

    def bump(key: str, tp: int, fp: int, fn: int) -> None:
        c = counts.setdefault(key, [0, 0, 0])
        c[0] += tp
        c[1] += fp
        c[2] += fn

    rules_to_score = sorted(rules.defined_rules)
    for doc, gold, meta in items:
        gold = list(gold)
        for rule in rules_to_score:
            if rule.kind == DYNAMIC:
                if meta is None:
                    continue
                hits = apply_dynamic_rules(doc, meta, rules, {rule})
            else:
                hits = apply_static_rules(doc, rules, {rule})
            for label in rule.labels:
                key = f"{label.value}_STATIC" if rule == NAME_STATIC else str(rule)
                pred = {(e.begin, e.end) for e in hits if e.label is label}
                ref = {(e.begin, e.end) for e in gold if e.label is label}
                bump(key, len(pred & ref), len(pred - ref), len(ref - pred))

    out = {}
    for key, (tp, fp, fn) in counts.items():
        p = 100.0 if tp + fp == 0 else 100.0 * tp / (tp + fp)
        r = 0.0 if tp + fn == 0 else 100.0 * tp / (tp + fn)
        f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        out[key] = RuleScore(p, r, f)
    return out
