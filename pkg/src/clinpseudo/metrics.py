"""Entity- and token-level scoring, redaction metrics, agreement, t-tests and drift."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from .core import LABELS, AnnotationSet, Document, Entity, Label, token_index_ranges


class MetricsError(ValueError):
    pass


class DocMismatch(MetricsError):
    pass


class DocSetMismatch(MetricsError):
    pass


class InsufficientSamples(MetricsError):
    pass


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _entities(x) -> list[Entity]:
    return list(x.entities) if isinstance(x, AnnotationSet) else list(x)


def _check_doc(doc: Document | None, *sets) -> None:
    ids = {s.doc_id for s in sets if isinstance(s, AnnotationSet)}
    if doc is not None:
        ids.add(doc.doc_id)
    if len(ids) > 1:
        raise DocMismatch(f"annotations refer to different documents: {sorted(ids)}")
    if doc is not None:
        n = len(doc.text)
        for s in sets:
            for e in _entities(s):
                if e.end > n:
                    raise DocMismatch(f"{e} lies outside document {doc.doc_id}")


# --- entity level ----------------------------------------------------------------------


def entity_counts(gold, pred, doc: Document | None = None) -> dict[Label, Counts]:
    """Exact (span and label) matching; one Counts per label."""
    _check_doc(doc, gold, pred)
    g = {(e.begin, e.end, e.label) for e in _entities(gold)}
    p = {(e.begin, e.end, e.label) for e in _entities(pred)}
    out = {l: Counts() for l in LABELS}
    for b, e, l in p:
        if (b, e, l) in g:
            out[l].tp += 1
        else:
            out[l].fp += 1
    for b, e, l in g - p:
        out[l].fn += 1
    return out


def micro(counts: Mapping[Label, Counts]) -> Counts:
    total = Counts()
    for c in counts.values():
        total += c
    return total


def entity_prf(gold, pred, doc: Document | None = None) -> dict:
    counts = entity_counts(gold, pred, doc)
    return _prf_table(counts)


def _prf_table(counts: Mapping[Label, Counts]) -> dict:
    out = {l.value: (c.precision, c.recall, c.f1) for l, c in counts.items()}
    m = micro(counts)
    out["micro"] = (m.precision, m.recall, m.f1)
    return out


# --- token level -----------------------------------------------------------------------


def token_labels(doc: Document, entities: Iterable[Entity]) -> list[Label | None]:
    """Label of the entity covering each token (first one wins), else None for O."""
    out: list[Label | None] = [None] * len(doc.tokens)
    for e, rng in token_index_ranges(doc, sorted(entities, key=Entity.sort_key)):
        for i in rng:
            if out[i] is None:
                out[i] = e.label
    return out


def token_counts(gold, pred, doc: Document) -> dict[Label, Counts]:
    _check_doc(doc, gold, pred)
    g = token_labels(doc, _entities(gold))
    p = token_labels(doc, _entities(pred))
    out = {l: Counts() for l in LABELS}
    for gl, pl in zip(g, p):
        if gl is not None and gl is pl:
            out[gl].tp += 1
            continue
        if pl is not None:
            out[pl].fp += 1
        if gl is not None:
            out[gl].fn += 1
    return out


def token_prf(gold, pred, doc: Document) -> dict:
    return _prf_table(token_counts(gold, pred, doc))


def redacted_counts(gold, pred, doc: Document) -> tuple[int, int]:
    """(gold tokens covered by any prediction, gold tokens)."""
    g = token_labels(doc, _entities(gold))
    p = token_labels(doc, _entities(pred))
    total = sum(1 for x in g if x is not None)
    hit = sum(1 for x, y in zip(g, p) if x is not None and y is not None)
    return hit, total


def redacted_recall(gold, pred, doc: Document) -> float | None:
    """Label-agnostic token recall; None when the document has no gold tokens."""
    hit, total = redacted_counts(gold, pred, doc)
    return hit / total if total else None


def fully_redacted(items: Iterable[tuple[Document, object, object]]) -> float:
    """Share of documents whose gold tokens are all covered; empty-gold documents count as covered."""
    n = full = 0
    for doc, gold, pred in items:
        hit, total = redacted_counts(gold, pred, doc)
        n += 1
        full += hit == total
    return full / n if n else 0.0


# --- confusion matrix ------------------------------------------------------------------

CONFUSION_AXIS: tuple[str, ...] = ("O",) + tuple(l.value for l in LABELS)
_AXIS_INDEX = {None: 0, **{l: i + 1 for i, l in enumerate(LABELS)}}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((len(CONFUSION_AXIS),) * 2, dtype=np.int64))

    def add(self, doc: Document, gold, pred) -> None:
        g = token_labels(doc, _entities(gold))
        p = token_labels(doc, _entities(pred))
        for gl, pl in zip(g, p):
            self.counts[_AXIS_INDEX[gl], _AXIS_INDEX[pl]] += 1

    def __iadd__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts = self.counts + other.counts
        return self

    def cell(self, gold: Label | None, pred: Label | None) -> int:
        return int(self.counts[_AXIS_INDEX[gold], _AXIS_INDEX[pred]])

    def normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def write_csv(self, path: str | Path, normalized: bool = False) -> None:
        data = self.normalized() if normalized else self.counts
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gold\\pred", *CONFUSION_AXIS])
            for name, row in zip(CONFUSION_AXIS, data):
                w.writerow([name, *(f"{v:.4f}" if normalized else int(v) for v in row)])


def confusion_matrix(items: Iterable[tuple[Document, object, object]]) -> ConfusionMatrix:
    cm = ConfusionMatrix()
    for doc, gold, pred in items:
        cm.add(doc, gold, pred)
    return cm


# --- corpus report ---------------------------------------------------------------------


@dataclass
class MetricsReport:
    entity: dict[Label, Counts] = field(default_factory=lambda: {l: Counts() for l in LABELS})
    token: dict[Label, Counts] = field(default_factory=lambda: {l: Counts() for l in LABELS})
    redacted_hit: int = 0
    redacted_total: int = 0
    docs: int = 0
    docs_fully_redacted: int = 0
    confusion: ConfusionMatrix = field(default_factory=ConfusionMatrix)

    def add(self, doc: Document, gold, pred) -> None:
        for l, c in entity_counts(gold, pred, doc).items():
            self.entity[l] += c
        for l, c in token_counts(gold, pred, doc).items():
            self.token[l] += c
        hit, total = redacted_counts(gold, pred, doc)
        self.redacted_hit += hit
        self.redacted_total += total
        self.docs += 1
        self.docs_fully_redacted += hit == total
        self.confusion.add(doc, gold, pred)

    def __iadd__(self, other: "MetricsReport") -> "MetricsReport":
        for l in LABELS:
            self.entity[l] += other.entity[l]
            self.token[l] += other.token[l]
        self.redacted_hit += other.redacted_hit
        self.redacted_total += other.redacted_total
        self.docs += other.docs
        self.docs_fully_redacted += other.docs_fully_redacted
        self.confusion += other.confusion
        return self

    @property
    def entity_micro(self) -> Counts:
        return micro(self.entity)

    @property
    def token_micro(self) -> Counts:
        return micro(self.token)

    @property
    def redacted(self) -> float:
        return self.redacted_hit / self.redacted_total if self.redacted_total else 0.0

    @property
    def fully_redacted(self) -> float:
        return self.docs_fully_redacted / self.docs if self.docs else 0.0

    def macro_f1(self, level: str = "token") -> float:
        table = self.token if level == "token" else self.entity
        present = [c for c in table.values() if c.tp + c.fn > 0]
        return sum(c.f1 for c in present) / len(present) if present else 0.0

    def summary(self) -> dict[str, float]:
        """Headline figures in percent."""
        t, e = self.token_micro, self.entity_micro
        return {
            "precision": 100 * t.precision,
            "recall": 100 * t.recall,
            "f1": 100 * t.f1,
            "entity_precision": 100 * e.precision,
            "entity_recall": 100 * e.recall,
            "entity_f1": 100 * e.f1,
            "redacted": 100 * self.redacted,
            "fully_redacted": 100 * self.fully_redacted,
        }

    def to_dict(self) -> dict:
        def table(d):
            return {
                l.value: {"tp": c.tp, "fp": c.fp, "fn": c.fn, "precision": 100 * c.precision, "recall": 100 * c.recall, "f1": 100 * c.f1}
                for l, c in d.items()
            }

        return {
            "summary": self.summary(),
            "entity": table(self.entity),
            "token": table(self.token),
            "macro_f1": {"entity": 100 * self.macro_f1("entity"), "token": 100 * self.macro_f1("token")},
            "redacted": {"hit": self.redacted_hit, "total": self.redacted_total},
            "documents": {"total": self.docs, "fully_redacted": self.docs_fully_redacted},
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "level", "tp", "fp", "fn", "precision", "recall", "f1"])
            for level, table in (("entity", self.entity), ("token", self.token)):
                rows = [(l.value, c) for l, c in table.items()] + [("micro", micro(table))]
                for name, c in rows:
                    w.writerow([name, level, c.tp, c.fp, c.fn, f"{100 * c.precision:.2f}", f"{100 * c.recall:.2f}", f"{100 * c.f1:.2f}"])
            w.writerow(["redacted", "token", self.redacted_hit, "", self.redacted_total - self.redacted_hit, "", f"{100 * self.redacted:.2f}", ""])
            w.writerow(["fully_redacted", "document", self.docs_fully_redacted, "", self.docs - self.docs_fully_redacted, "", f"{100 * self.fully_redacted:.2f}", ""])


def evaluate(items: Iterable[tuple[Document, object, object]]) -> MetricsReport:
    report = MetricsReport()
    for doc, gold, pred in items:
        report.add(doc, gold, pred)
    return report


# --- inter-annotator agreement ---------------------------------------------------------


def iaa(
    annot_a: Sequence[AnnotationSet],
    annot_b: Sequence[AnnotationSet],
    docs: Mapping[str, Document] | Iterable[Document],
) -> dict[str, dict[str, float]]:
    """Micro and per-label F1 between two annotators, exact and token matching."""
    docs = docs if isinstance(docs, Mapping) else {d.doc_id: d for d in docs}
    a = {s.doc_id: s for s in annot_a}
    b = {s.doc_id: s for s in annot_b}
    if set(a) != set(b) or len(a) != len(annot_a) or len(b) != len(annot_b):
        raise DocSetMismatch("both annotators must cover the same documents, once each")
    missing = set(a) - set(docs)
    if missing:
        raise DocSetMismatch(f"no text for documents {sorted(missing)}")
    exact = {l: Counts() for l in LABELS}
    token = {l: Counts() for l in LABELS}
    for doc_id in sorted(a):
        doc = docs[doc_id]
        for l, c in entity_counts(a[doc_id], b[doc_id], doc).items():
            exact[l] += c
        for l, c in token_counts(a[doc_id], b[doc_id], doc).items():
            token[l] += c

    def f1s(table):
        out = {l.value: c.f1 for l, c in table.items() if c.tp + c.fp + c.fn}
        m = micro(table)
        # two annotators who both mark nothing agree perfectly
        out["micro"] = m.f1 if m.tp + m.fp + m.fn else 1.0
        return out

    return {"exact": f1s(exact), "token": f1s(token)}


# --- significance ----------------------------------------------------------------------


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    df: int


def ttest_compare(runs_a: Sequence[float], runs_b: Sequence[float]) -> TTest:
    """Two-sample Student t-test with pooled (equal) variance, two-sided."""
    a = np.asarray(runs_a, dtype=np.float64)
    b = np.asarray(runs_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InsufficientSamples("need at least two samples per side")
    df = a.size + b.size - 2
    pooled = (((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()) / df
    diff = a.mean() - b.mean()
    se = math.sqrt(pooled * (1 / a.size + 1 / b.size))
    if se == 0.0:
        if diff == 0.0:
            return TTest(0.0, 1.0, df)
        return TTest(math.copysign(math.inf, diff), 0.0, df)
    t = diff / se
    p = float(2 * special.stdtr(df, -abs(t)))
    return TTest(float(t), min(1.0, p), df)


# --- drift -----------------------------------------------------------------------------


@dataclass
class EntityStats:
    docs: int = 0
    counts: Counter = field(default_factory=Counter)

    def add(self, entities: Iterable[Entity]) -> None:
        self.docs += 1
        self.counts.update(e.label.value for e in entities)

    def rate(self, label: Label) -> float:
        return self.counts[label.value] / self.docs if self.docs else 0.0

    def to_dict(self) -> dict:
        return {"docs": self.docs, "counts": {l.value: self.counts[l.value] for l in LABELS}}

    @classmethod
    def from_dict(cls, d: dict) -> "EntityStats":
        return cls(int(d["docs"]), Counter({Label.parse(k).value: int(v) for k, v in d["counts"].items()}))

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def read_json(cls, path: str | Path) -> "EntityStats":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class DriftRow:
    label: str
    baseline_rate: float
    batch_rate: float
    relative_change: float
    alert: bool


def drift_report(batch: EntityStats, baseline: EntityStats, threshold: float = 0.20) -> list[DriftRow]:
    """Per-label entities-per-document rates compared with a baseline.

    An empty batch (no documents or no entities at all) flags every label.
    """
    degenerate = batch.docs == 0 or sum(batch.counts.values()) == 0
    rows = []
    for l in LABELS:
        base, cur = baseline.rate(l), batch.rate(l)
        if base == 0.0:
            change = 0.0 if cur == 0.0 else math.inf
        else:
            change = (cur - base) / base
        rows.append(DriftRow(l.value, base, cur, change, degenerate or abs(change) > threshold))
    return rows


def write_drift_csv(path: str | Path, rows: Sequence[DriftRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "baseline_rate", "batch_rate", "relative_change", "alert"])
        for r in rows:
            w.writerow([r.label, f"{r.baseline_rate:.4f}", f"{r.batch_rate:.4f}", f"{r.relative_change:.4f}", int(r.alert)])
