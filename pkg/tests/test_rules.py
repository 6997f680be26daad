import datetime as dt
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from clinpseudo.core import Document, Label, PatientMetadata, check_non_overlapping
from clinpseudo.pipeline import Annotator, annotate_corpus
from clinpseudo.rules import (
    ALL_RULES,
    NAME_STATIC,
    MissingRule,
    RuleError,
    RuleId,
    RuleScore,
    RuleSet,
    apply_dynamic_rules,
    apply_static_rules,
    default_rules,
    gate_rules,
    read_report_csv,
    rule_precision_report,
    run_rule_pipeline,
    write_report_csv,
)
from clinpseudo.textprep import prepare

REFERENCE = Path(__file__).parent / "data" / "rule_report_reference.csv"


def hits(text, meta=None, enabled=None):
    doc = prepare(Document("d", text))
    return [(text[e.begin:e.end], e.label) for e in run_rule_pipeline(doc, meta, default_rules(), enabled)]


def static_hits(text):
    doc = prepare(Document("d", text))
    return [(text[e.begin:e.end], e.label) for e in apply_static_rules(doc, default_rules())]


def test_address():
    assert ("33 boulevard de Picpus", Label.ADDRESS) in static_hits("domicilié au 33 boulevard de Picpus.")


def test_birthdate_pattern():
    assert ("04/05/1971", Label.BIRTHDATE) in hits("Patiente née le 04/05/1971 à Lyon.")


def test_name_prefix():
    assert ("Dupont", Label.LASTNAME) in hits("Vu par le Dr. Dupont ce jour.")


def test_float_is_not_a_date():
    assert not [h for h in static_hits("last meeting: 12.03") if h[1] in (Label.DATE, Label.BIRTHDATE)]


@pytest.mark.parametrize(
    "text, expected",
    [
        ("tel 01 45 67 89 10", ("01 45 67 89 10", Label.PHONE)),
        ("tel +33 6 12 34 56 78", ("+33 6 12 34 56 78", Label.PHONE)),
        ("NIR 1 85 12 75 123 456 78", ("1 85 12 75 123 456 78", Label.SSN)),
        ("NDA : 123456789", ("123456789", Label.VISIT_ID)),
        ("mail jean.dupont@aphp.fr", ("jean.dupont@aphp.fr", Label.EMAIL)),
        ("le 12 nov 2019", ("12 nov 2019", Label.DATE)),
        ("transfert à l'Hôpital Tenon", ("Hôpital Tenon", Label.HOSPITAL)),
        ("75012 Paris", ("Paris", Label.CITY)),
    ],
)
def test_static_patterns(text, expected):
    assert expected in hits(text)


META = PatientMetadata(
    "p1",
    first_names=("Anne",),
    last_names=("Durand",),
    birthdate=dt.date(1980, 3, 12),
    emails=("Anne.Durand@mail.fr",),
    internal_patient_ids=("AB12345",),
)


def test_dynamic_lastname():
    doc = prepare(Document("d", "patient Durand hospitalisé"))
    out = apply_dynamic_rules(doc, META, default_rules())
    assert [(doc.text[e.begin:e.end], e.label) for e in out] == [("Durand", Label.LASTNAME)]


def test_dynamic_birthdate_relabel():
    assert hits("admis le 12/03/1980", META) == [("12/03/1980", Label.BIRTHDATE)]


def test_dynamic_strict_is_case_sensitive():
    assert ("anne", Label.FIRSTNAME) not in hits("vu anne ce jour", META)


def test_dynamic_lowercase_matching():
    out = hits("contact anne.durand@mail.fr ou ab12345", META)
    assert ("anne.durand@mail.fr", Label.EMAIL) in out
    assert ("ab12345", Label.PATIENT_ID) in out


def test_no_metadata_static_only():
    text = "patient Durand vu le 12/03/1980"
    assert hits(text, None) == [("12/03/1980", Label.DATE)]


def test_hospital_inside_address_loses():
    out = hits("au 12 rue de l'Hôpital Saint-Louis")
    assert [l for _, l in out] == [Label.ADDRESS]


def test_hospital_shadows_city_and_names():
    meta = PatientMetadata("p", last_names=("Tenon",), city="Tenon")
    out = hits("transfert à l'Hôpital Tenon", meta)
    assert out == [("Hôpital Tenon", Label.HOSPITAL)]


def test_dynamic_hits_match_metadata(small_bundle):
    rules = default_rules()
    for doc, _ in small_bundle.items()[:30]:
        doc = prepare(doc)
        meta = small_bundle.metadata[doc.patient_id]
        values = meta.values_by_label()
        for e in apply_dynamic_rules(doc, meta, rules):
            surface = doc.text[e.begin:e.end]
            if e.label is Label.BIRTHDATE:
                continue
            if e.label in (Label.PATIENT_ID, Label.EMAIL, Label.VISIT_ID, Label.ADDRESS):
                assert surface.lower() in {v.lower() for v in values[e.label]}
            else:
                assert surface in values[e.label]


def test_rule_output_non_overlapping_and_deterministic(small_bundle):
    docs = [prepare(d) for d in small_bundle.documents[:40]]
    annot = Annotator("rules")
    a = annotate_corpus(docs, small_bundle.metadata, annot, jobs=1)
    b = annotate_corpus(docs, small_bundle.metadata, annot, jobs=2)
    assert a == b
    for ents in a:
        assert check_non_overlapping(ents)


def test_rule_id_parsing():
    assert str(RuleId.parse("NSS_STATIC")) == "SSN_STATIC"
    assert str(RuleId.parse("VISIT ID_DYNAMIC")) == "VISIT_ID_DYNAMIC"
    assert RuleId.parse("NAME_STATIC") == NAME_STATIC
    with pytest.raises(RuleError):
        RuleId.parse("PATIENT_ID_STATIC")


def test_gate_reference_report():
    kept = gate_rules(read_report_csv(REFERENCE), 98.0)
    assert RuleId.parse("DATE_STATIC") not in kept
    assert NAME_STATIC not in kept
    report_rules = {RuleId.parse(k) for k in read_report_csv(REFERENCE) if "NAME_STATIC" not in k}
    assert kept == report_rules - {RuleId.parse("DATE_STATIC")}


def test_gate_thresholds():
    report = read_report_csv(REFERENCE)
    all_rules = gate_rules(report, 0.0)
    assert NAME_STATIC in all_rules and RuleId.parse("DATE_STATIC") in all_rules
    rep = {str(r): RuleScore(100.0, 50.0, 66.7) for r in ALL_RULES if r != NAME_STATIC}
    rep["PHONE_STATIC"] = RuleScore(99.9, 50.0, 66.6)
    rep["FIRSTNAME_STATIC"] = rep["LASTNAME_STATIC"] = RuleScore(100.0, 1.0, 2.0)
    kept = gate_rules(rep, 100.0)
    assert RuleId.parse("PHONE_STATIC") not in kept
    assert len(kept) == len(ALL_RULES) - 1


@given(st.floats(0, 100), st.floats(0, 100))
def test_gating_monotone(t1, t2):
    lo, hi = sorted((t1, t2))
    report = read_report_csv(REFERENCE)
    assert gate_rules(report, hi) <= gate_rules(report, lo)


def test_missing_rule():
    with pytest.raises(MissingRule):
        gate_rules({"PHONE_STATIC": RuleScore(100, 1, 2)}, 98.0, candidates=["EMAIL_STATIC"])


def test_score_range_validated():
    with pytest.raises(ValueError):
        RuleScore(101.0, 0.0, 0.0)


def test_report_round_trip(tmp_path, small_bundle):
    items = [(prepare(d), list(g), small_bundle.metadata[d.patient_id]) for d, g in small_bundle.items()[:20]]
    report = rule_precision_report(items, default_rules())
    assert "FIRSTNAME_STATIC" in report and "LASTNAME_STATIC" in report
    write_report_csv(tmp_path / "r.csv", report)
    back = read_report_csv(tmp_path / "r.csv")
    assert set(back) == set(report)
    assert all(abs(back[k].precision - report[k].precision) < 0.051 for k in report)


def test_bad_regex_is_construction_error():
    with pytest.raises(RuleError):
        RuleSet.from_dict({"static_patterns": [{"rule": "DATE_STATIC", "label": "DATE", "regex": "("}]})
