"""Readers and writers for the on-disk formats.

* standoff JSON-lines: one document per line with its entities
* metadata CSV: one row per patient, multi-valued cells joined with ``|``
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from pathlib import Path
from typing import Iterable, Iterator

from .core import AnnotationSet, Document, Entity, Label, PatientMetadata, Span

MULTI_SEP = "|"

METADATA_COLUMNS = (
    "person_id",
    "first_names",
    "last_names",
    "birth_date",
    "city",
    "zip",
    "phones",
    "ssn",
    "emails",
    "address",
    "patient_ids",
    "visit_ids",
)


def entity_to_json(e: Entity) -> dict:
    out = {"begin": e.begin, "end": e.end, "label": e.label.value, "source": e.source}
    if e.score is not None:
        out["score"] = e.score
    return out


def entity_from_json(obj: dict, default_source: str = "gold") -> Entity:
    return Entity(
        Span(int(obj["begin"]), int(obj["end"])),
        Label.parse(obj["label"]),
        obj.get("source", default_source),
        score=obj.get("score"),
    )


def document_record(doc: Document, entities: Iterable[Entity]) -> dict:
    return {
        "doc_id": doc.doc_id,
        "doc_type": doc.doc_type,
        "patient_id": doc.patient_id,
        "text": doc.text,
        "entities": [entity_to_json(e) for e in sorted(entities, key=Entity.sort_key)],
    }


def write_standoff(path: str | Path, items: Iterable[tuple[Document, Iterable[Entity]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc, entities in items:
            fh.write(json.dumps(document_record(doc, entities), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def iter_standoff(path: str | Path) -> Iterator[tuple[Document, AnnotationSet]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc = Document(
                    doc_id=str(rec["doc_id"]),
                    text=rec["text"],
                    doc_type=rec.get("doc_type") or "UNKNOWN",
                    patient_id=rec.get("patient_id"),
                )
                ents = tuple(entity_from_json(e) for e in rec.get("entities", ()))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
            yield doc, AnnotationSet(doc.doc_id, ents)


def read_standoff(path: str | Path) -> list[tuple[Document, AnnotationSet]]:
    return list(iter_standoff(path))


def _join(values: Iterable[str]) -> str:
    return MULTI_SEP.join(values)


def _split(cell: str | None) -> tuple[str, ...]:
    if not cell:
        return ()
    return tuple(v for v in cell.split(MULTI_SEP) if v)


def write_metadata_csv(path: str | Path, rows: Iterable[PatientMetadata]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METADATA_COLUMNS)
        for m in rows:
            w.writerow([
                m.patient_id,
                _join(m.first_names),
                _join(m.last_names),
                m.birthdate.isoformat() if m.birthdate else "",
                m.city or "",
                m.zip or "",
                _join(m.phones),
                m.ssn or "",
                _join(m.emails),
                m.address or "",
                _join(m.internal_patient_ids),
                _join(m.visit_ids),
            ])


def read_metadata_csv(path: str | Path) -> dict[str, PatientMetadata]:
    out: dict[str, PatientMetadata] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            birth = row.get("birth_date") or ""
            meta = PatientMetadata(
                patient_id=row["person_id"],
                first_names=_split(row.get("first_names")),
                last_names=_split(row.get("last_names")),
                birthdate=dt.date.fromisoformat(birth) if birth else None,
                city=row.get("city") or None,
                zip=row.get("zip") or None,
                phones=_split(row.get("phones")),
                ssn=row.get("ssn") or None,
                emails=_split(row.get("emails")),
                address=row.get("address") or None,
                internal_patient_ids=_split(row.get("patient_ids")),
                visit_ids=_split(row.get("visit_ids")),
            )
            out[meta.patient_id] = meta
    return out


def write_predictions(path: str | Path, predictions: dict[str, Iterable[Entity]]) -> None:
    """Prediction file: ``{"doc_id", "entities": [{"begin","end","label","score"?}]}`` per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc_id, ents in predictions.items():
            rec = {
                "doc_id": doc_id,
                "entities": [entity_to_json(e) for e in sorted(ents, key=Entity.sort_key)],
            }
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_prediction_records(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
