"""Synthetic clinical-style documents with planted identifiers and exact gold spans.

Documents are assembled from sentence templates.  A slot looks like
``{LABEL}``, ``{LABEL@p}`` (a value owned by the document's patient, drawn
from the metadata row) or ``{LABEL:modifier}``.  ``{TITLE}`` and ``{AGE}``
are filler slots that are not identifiers.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import dates
from .core import AnnotationSet, Document, Entity, Label, PatientMetadata, Span
from .io import read_metadata_csv, read_standoff, write_metadata_csv, write_standoff

NOISE_CLASSES = ("glued_date", "slash_names", "missing_space", "ambiguous_initial")
DEFAULT_NOISE = {k: 0.05 for k in NOISE_CLASSES}

_SLOT = re.compile(r"\{([A-Z_]+)(@p)?(?::([a-z]+))?\}")
_TITLES = ("M.", "Mme", "Monsieur", "Madame", "Mr", "Mlle")
_EMAIL_DOMAINS = ("gmail.com", "orange.fr", "free.fr", "laposte.net", "yahoo.fr", "hotmail.fr", "sfr.fr")
_MONTH_FULL = [names[0] for names in dates.MONTHS]
_MONTH_ABBR = ("jan", "fev", "mar", "avr", "mai", "juin", "juil", "aout", "sep", "oct", "nov", "dec")


class SynthError(ValueError):
    pass


class EmptyLexicon(SynthError):
    pass


class EmptyTemplateSet(SynthError):
    pass


class TooFewPatients(SynthError):
    pass


def _data_path(name: str) -> Path:
    return Path(str(resources.files("clinpseudo") / "data" / name))


@dataclass(frozen=True)
class Lexicons:
    first_names: tuple[str, ...]
    last_names: tuple[str, ...]
    cities: tuple[tuple[str, str], ...]  # (zip, city)
    streets: tuple[str, ...]
    hospitals: tuple[str, ...]

    def __post_init__(self):
        for name in ("first_names", "last_names", "cities", "streets", "hospitals"):
            if not getattr(self, name):
                raise EmptyLexicon(f"lexicon {name} is empty")

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "Lexicons":
        def lines(name: str) -> tuple[str, ...]:
            path = _data_path(name) if directory is None else Path(directory) / name
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise EmptyLexicon(f"cannot read lexicon {path}: {exc.strerror}") from None
            return tuple(l.strip() for l in text.splitlines() if l.strip())

        cities = []
        for row in lines("cities.txt"):
            zip_code, _, city = row.partition("\t")
            cities.append((zip_code.strip(), city.strip()))
        return cls(lines("firstnames.txt"), lines("lastnames.txt"), tuple(cities), lines("streets.txt"), lines("hospitals.txt"))


@dataclass(frozen=True)
class TemplateSet:
    styles: Mapping[str, dict]
    doc_types: Mapping[str, dict]
    rates: Mapping[str, Mapping[str, float]]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "TemplateSet":
        path = _data_path("templates.json") if path is None else Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise EmptyTemplateSet(f"cannot read template file {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise EmptyTemplateSet(f"template file {path} is not valid JSON: {exc}") from None
        if not raw.get("styles"):
            raise EmptyTemplateSet(f"template file {path} defines no styles")
        return cls(raw["styles"], raw.get("doc_types", {}), raw.get("rates", {}))


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    doc_count: int = 100
    doc_type_mix: Mapping[str, float] | None = None  # defaults to the weights in the template file
    rates: Mapping[str, Mapping[str, float]] = field(default_factory=dict)  # per doc type or style
    noise_rates: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_NOISE))
    docs_per_patient: float = 3.0
    templates_path: str | None = None
    lexicon_dir: str | None = None

    def __post_init__(self):
        if self.doc_count < 0:
            raise SynthError("doc_count must be >= 0")
        if self.docs_per_patient <= 0:
            raise SynthError("docs_per_patient must be positive")
        if self.doc_type_mix is not None:
            if any(w < 0 for w in self.doc_type_mix.values()) or sum(self.doc_type_mix.values()) <= 0:
                raise SynthError("doc type weights must be >= 0 and sum to a positive value")
        for profile in self.rates.values():
            if any(r < 0 for r in profile.values()):
                raise SynthError("entity rates must be >= 0")
        unknown = set(self.noise_rates) - set(NOISE_CLASSES)
        if unknown:
            raise SynthError(f"unknown noise classes {sorted(unknown)}")


@dataclass
class SyntheticBundle:
    documents: list[Document]
    gold: list[AnnotationSet]
    metadata: dict[str, PatientMetadata]

    def __len__(self) -> int:
        return len(self.documents)

    def items(self) -> list[tuple[Document, AnnotationSet]]:
        return list(zip(self.documents, self.gold))

    def subset(self, doc_ids) -> "SyntheticBundle":
        keep = set(doc_ids)
        pairs = [(d, g) for d, g in zip(self.documents, self.gold) if d.doc_id in keep]
        pids = {d.patient_id for d, _ in pairs}
        return SyntheticBundle(
            [d for d, _ in pairs], [g for _, g in pairs], {p: m for p, m in self.metadata.items() if p in pids}
        )

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_standoff(out / "corpus.jsonl", zip(self.documents, self.gold))
        write_metadata_csv(out / "metadata.csv", [self.metadata[k] for k in sorted(self.metadata)])

    @classmethod
    def read(cls, directory: str | Path) -> "SyntheticBundle":
        d = Path(directory)
        pairs = read_standoff(d / "corpus.jsonl")
        meta = read_metadata_csv(d / "metadata.csv") if (d / "metadata.csv").exists() else {}
        return cls([p[0] for p in pairs], [p[1] for p in pairs], meta)


# --- value rendering -------------------------------------------------------------------


def _ascii(s: str) -> str:
    s = unicodedata.normalize("NFKD", s)
    return re.sub(r"[^a-z0-9]+", "", "".join(c for c in s if not unicodedata.combining(c)).lower())


def _rand_date(rng: np.random.Generator, lo: int, hi: int) -> dt.date:
    start = dt.date(lo, 1, 1).toordinal()
    end = dt.date(hi, 12, 31).toordinal()
    return dt.date.fromordinal(int(rng.integers(start, end + 1)))


def _render_date(d: dt.date, rng: np.random.Generator, modifier: str | None, glued: bool) -> str:
    if modifier == "iso":
        return d.isoformat()
    if modifier == "dots":
        return d.strftime("%d.%m.%Y")
    if glued:
        return f"{d.day}{_MONTH_ABBR[d.month - 1]} {d.year}"
    r = rng.random()
    if r < 0.55:
        return d.strftime("%d/%m/%Y")
    if r < 0.65:
        return d.strftime("%d/%m/%y")
    if r < 0.75:
        return d.strftime("%d-%m-%Y")
    day = "1er" if d.day == 1 else str(d.day)
    return f"{day} {_MONTH_FULL[d.month - 1]} {d.year}"


def _phone(rng: np.random.Generator, style: str | None = None) -> str:
    first = int(rng.choice([1, 6, 7, 1, 6]))
    groups = [f"{int(x):02d}" for x in rng.integers(0, 100, size=4)]
    style = style or str(rng.choice(["space", "space", "dots", "compact", "intl"]))
    if style == "dots":
        return f"0{first}." + ".".join(groups)
    if style == "compact":
        return f"0{first}" + "".join(groups)
    if style == "intl":
        return f"+33 {first} " + " ".join(groups)
    return f"0{first} " + " ".join(groups)


def _ssn(rng: np.random.Generator, birth: dt.date, zip_code: str) -> str:
    sex = int(rng.integers(1, 3))
    dept = zip_code[:2]
    commune = int(rng.integers(1, 1000))
    order = int(rng.integers(1, 1000))
    body = f"{sex}{birth.year % 100:02d}{birth.month:02d}{dept}{commune:03d}{order:03d}"
    key = 97 - int(body) % 97
    return f"{sex} {birth.year % 100:02d} {birth.month:02d} {dept} {commune:03d} {order:03d} {key:02d}"


def _digits(rng: np.random.Generator, n: int, lead: str = "") -> str:
    rest = n - len(lead)
    return lead + "".join(str(int(x)) for x in rng.integers(0, 10, size=rest))


def _make_patient(pid: str, rng: np.random.Generator, lex: Lexicons) -> PatientMetadata:
    first = str(rng.choice(lex.first_names))
    last = str(rng.choice(lex.last_names))
    birth = _rand_date(rng, 1930, 2005)
    zip_code, city = lex.cities[int(rng.integers(len(lex.cities)))]
    address = f"{int(rng.integers(1, 200))} {rng.choice(lex.streets)}"
    email = f"{_ascii(first)}.{_ascii(last)}@{rng.choice(_EMAIL_DOMAINS)}"
    return PatientMetadata(
        patient_id=pid,
        first_names=(first,),
        last_names=(last,),
        birthdate=birth,
        city=city,
        zip=zip_code,
        phones=(_phone(rng),),
        ssn=_ssn(rng, birth, zip_code),
        emails=(email,),
        address=address,
        internal_patient_ids=(_digits(rng, 10, "80"),),
        visit_ids=tuple(_digits(rng, 9, "1") for _ in range(3)),
    )


# --- document assembly -----------------------------------------------------------------


class _Builder:
    def __init__(self):
        self.parts: list[str] = []
        self.length = 0
        self.entities: list[Entity] = []

    def text(self, s: str) -> None:
        self.parts.append(s)
        self.length += len(s)

    def entity(self, s: str, label: Label) -> None:
        self.entities.append(Entity(Span(self.length, self.length + len(s)), label))
        self.text(s)

    def drop_trailing_space(self) -> None:
        if self.parts and self.parts[-1].endswith(" "):
            self.parts[-1] = self.parts[-1][:-1]
            self.length -= 1


class Generator:
    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.templates = TemplateSet.load(config.templates_path)
        self.lex = Lexicons.load(config.lexicon_dir)
        mix = config.doc_type_mix
        if mix is None:
            mix = {k: float(v.get("weight", 1.0)) for k, v in self.templates.doc_types.items()}
        if not mix:
            raise EmptyTemplateSet("no document types defined")
        self.doc_types = sorted(mix)
        weights = np.array([mix[t] for t in self.doc_types], dtype=np.float64)
        self.type_probs = weights / weights.sum()
        self._check_templates()

    def style_of(self, doc_type: str) -> str:
        spec = self.templates.doc_types.get(doc_type, {})
        return spec.get("style", "prose")

    def rates_for(self, doc_type: str) -> dict[str, float]:
        style = self.style_of(doc_type)
        out = dict(self.templates.rates.get(style, {}))
        out.update(self.templates.rates.get(doc_type, {}))
        out.update(self.config.rates.get(style, {}))
        out.update(self.config.rates.get(doc_type, {}))
        return out

    def _check_templates(self) -> None:
        for t, p in zip(self.doc_types, self.type_probs):
            if p == 0:
                continue
            style = self.style_of(t)
            spec = self.templates.styles.get(style)
            if not spec or not (spec.get("filler") or spec.get("keyed")):
                raise EmptyTemplateSet(f"style {style!r} (doc type {t}) has no templates")
            for key, rate in self.rates_for(t).items():
                if rate <= 0:
                    continue
                pool = spec.get("filler") if key == "filler" else spec.get("keyed", {}).get(key)
                if not pool:
                    raise EmptyTemplateSet(f"style {style!r} has no templates for {key} (rate {rate})")

    def patients(self) -> list[PatientMetadata]:
        n = math.ceil(self.config.doc_count / self.config.docs_per_patient) if self.config.doc_count else 0
        return [
            _make_patient(f"pat{j:05d}", np.random.default_rng([self.config.seed, 1, j]), self.lex)
            for j in range(n)
        ]

    def document(self, i: int, patient: PatientMetadata) -> tuple[Document, AnnotationSet]:
        rng = np.random.default_rng([self.config.seed, 2, i])
        doc_type = self.doc_types[int(rng.choice(len(self.doc_types), p=self.type_probs))]
        style = self.templates.styles[self.style_of(doc_type)]
        visit = str(rng.choice(patient.visit_ids))

        chosen: list[str] = []
        for key, rate in sorted(self.rates_for(doc_type).items()):
            pool = style["filler"] if key == "filler" else style.get("keyed", {}).get(key, ())
            for _ in range(int(rng.poisson(rate)) if rate > 0 else 0):
                chosen.append(str(pool[int(rng.integers(len(pool)))]))
        order = rng.permutation(len(chosen))

        b = _Builder()
        joiner = style.get("joiner", " ")
        pbreak = float(style.get("paragraph_break", 0.0))
        if joiner == "\n":
            b.text("COMPTE RENDU ANATOMO-PATHOLOGIQUE\n")
        for n, k in enumerate(order):
            if n:
                b.text("\n\n" if joiner == " " and rng.random() < pbreak else joiner)
            self._render(chosen[k], b, rng, patient, visit)
        doc = Document(f"doc{i:06d}", "".join(b.parts), doc_type, patient.patient_id)
        return doc, AnnotationSet(doc.doc_id, tuple(b.entities))

    def _noise(self, name: str, rng: np.random.Generator) -> bool:
        rate = self.config.noise_rates.get(name, 0.0)
        return rate > 0 and rng.random() < rate

    def _value(self, label: str, owned: bool, modifier: str | None, rng, patient: PatientMetadata, visit: str) -> str:
        if label == "DATE":
            glued = modifier is None and self._noise("glued_date", rng)
            return _render_date(_rand_date(rng, 2005, 2024), rng, modifier, glued)
        if label == "BIRTHDATE":
            d = patient.birthdate if owned else _rand_date(rng, 1930, 2005)
            if modifier in ("iso", "dots"):
                return _render_date(d, rng, modifier, False)
            return d.strftime("%d/%m/%Y")
        if label == "FIRSTNAME":
            return patient.first_names[0] if owned else str(rng.choice(self.lex.first_names))
        if label == "LASTNAME":
            return patient.last_names[0] if owned else str(rng.choice(self.lex.last_names))
        if label == "CITY":
            return patient.city if owned else self.lex.cities[int(rng.integers(len(self.lex.cities)))][1]
        if label == "ZIP":
            return patient.zip if owned else self.lex.cities[int(rng.integers(len(self.lex.cities)))][0]
        if label == "ADDRESS":
            return patient.address if owned else f"{int(rng.integers(1, 200))} {rng.choice(self.lex.streets)}"
        if label == "PHONE":
            return patient.phones[0] if owned else _phone(rng, modifier)
        if label == "EMAIL":
            if owned:
                return patient.emails[0]
            return f"{_ascii(str(rng.choice(self.lex.first_names)))}.{_ascii(str(rng.choice(self.lex.last_names)))}@aphp.fr"
        if label == "SSN":
            return patient.ssn if owned else _ssn(rng, _rand_date(rng, 1930, 2005), "75")
        if label == "PATIENT_ID":
            return patient.internal_patient_ids[0] if owned else _digits(rng, 10, "80")
        if label == "VISIT_ID":
            return visit if owned else _digits(rng, 9, "1")
        if label == "HOSPITAL":
            return str(rng.choice(self.lex.hospitals))
        raise SynthError(f"unknown slot label {label}")

    def _render(self, template: str, b: _Builder, rng, patient: PatientMetadata, visit: str) -> None:
        pos = 0
        prev_label: str | None = None
        for m in _SLOT.finditer(template):
            literal = template[pos:m.start()]
            if prev_label == "LASTNAME" and literal.startswith(" ") and literal[1:2].isalpha() and self._noise("missing_space", rng):
                literal = literal[1:]
            if prev_label == "FIRSTNAME" and literal == " " and m.group(1) == "LASTNAME" and self._noise("slash_names", rng):
                literal = "/"
            b.text(literal)
            name, owned, modifier = m.group(1), bool(m.group(2)), m.group(3)
            if name == "TITLE":
                title = str(rng.choice(_TITLES))
                if self._noise("ambiguous_initial", rng):
                    title = "M"
                b.text(title)
                prev_label = None
            elif name == "AGE":
                b.text(str(int(rng.integers(18, 96))))
                prev_label = None
            else:
                value = self._value(name, owned, modifier, rng, patient, visit)
                if modifier == "upper":
                    value = value.upper()
                b.entity(value, Label.parse(name))
                prev_label = name
            pos = m.end()
        tail = template[pos:]
        if prev_label == "LASTNAME" and tail.startswith(" ") and tail[1:2].isalpha() and self._noise("missing_space", rng):
            tail = tail[1:]
        b.text(tail)


def generate(config: GeneratorConfig) -> SyntheticBundle:
    gen = Generator(config)
    patients = gen.patients()
    docs, gold = [], []
    for i in range(config.doc_count):
        d, g = gen.document(i, patients[i % len(patients)])
        docs.append(d)
        gold.append(g)
    return SyntheticBundle(docs, gold, {p.patient_id: p for p in patients})


def split(
    bundle: SyntheticBundle,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[SyntheticBundle, SyntheticBundle, SyntheticBundle]:
    """Patient-disjoint train/dev/test split; patient counts by largest remainder."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise SynthError("ratios must be three positive numbers summing to 1")
    pids = sorted({d.patient_id for d in bundle.documents})
    if len(pids) < 3:
        raise TooFewPatients(f"need at least 3 patients to split, got {len(pids)}")
    rng = np.random.default_rng([seed, 3])
    order = [pids[k] for k in rng.permutation(len(pids))]
    exact = [r * len(pids) for r in ratios]
    sizes = [int(math.floor(x)) for x in exact]
    for k in sorted(range(3), key=lambda k: (-(exact[k] - sizes[k]), k))[: len(pids) - sum(sizes)]:
        sizes[k] += 1
    # every part gets at least one patient
    for k in range(3):
        if sizes[k] == 0:
            donor = max(range(3), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[k] = 1
    cuts = [0, sizes[0], sizes[0] + sizes[1], len(pids)]
    parts = []
    for k in range(3):
        group = set(order[cuts[k]:cuts[k + 1]])
        parts.append(bundle.subset(d.doc_id for d in bundle.documents if d.patient_id in group))
    return tuple(parts)
