import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clinpseudo.core import AnnotationSet, Document, Entity, Label
from clinpseudo.hybrid import merge
from clinpseudo.metrics import (
    DocMismatch,
    DocSetMismatch,
    EntityStats,
    InsufficientSamples,
    confusion_matrix,
    drift_report,
    entity_counts,
    entity_prf,
    evaluate,
    fully_redacted,
    iaa,
    redacted_recall,
    token_counts,
    token_prf,
    ttest_compare,
)
from clinpseudo.textprep import prepare
import oracles


def doc3():
    return prepare(Document("d", "aa bb cc dd"))


def test_entity_prf_half():
    gold = [Entity.of(0, 2, "CITY"), Entity.of(3, 5, "DATE")]
    pred = [Entity.of(0, 2, "CITY"), Entity.of(6, 8, "DATE")]
    assert entity_prf(gold, pred)["micro"] == (0.5, 0.5, 0.5)
    assert entity_prf(gold, gold)["micro"] == (1.0, 1.0, 1.0)


def test_token_prf_partial():
    doc = doc3()
    gold = [Entity.of(3, 8, "LASTNAME")]
    pred = [Entity.of(3, 5, "LASTNAME")]
    p, r, f = token_prf(gold, pred, doc)["LASTNAME"]
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3)
    wrong = token_prf(gold, [Entity.of(3, 8, "FIRSTNAME")], doc)
    assert wrong["LASTNAME"][2] == 0.0 and wrong["FIRSTNAME"][2] == 0.0


def test_redacted_examples():
    doc = doc3()
    gold = [Entity.of(3, 8, "LASTNAME")]
    assert redacted_recall(gold, [Entity.of(3, 8, "FIRSTNAME")], doc) == 1.0
    assert redacted_recall(gold, [], doc) == 0.0
    assert redacted_recall([], [], doc) is None


def test_fully_redacted_examples():
    docs = [prepare(Document(f"d{i}", " ".join(["w"] * 10))) for i in range(3)]
    full = [Entity.of(0, 19, "DATE")]
    partial = [Entity.of(0, 17, "DATE")]
    items = [(docs[0], full, full), (docs[1], full, full), (docs[2], full, partial)]
    assert fully_redacted(items) == pytest.approx(2 / 3)
    assert fully_redacted([(d, full, []) for d in docs]) == 0.0
    assert fully_redacted([(docs[0], [], [])]) == 1.0


def test_confusion_examples():
    doc = doc3()
    gold = [Entity.of(3, 8, "LASTNAME")]
    cm = confusion_matrix([(doc, gold, gold)])
    assert np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    cm = confusion_matrix([(doc, gold, [Entity.of(3, 5, "FIRSTNAME")])])
    assert cm.cell(Label.LASTNAME, Label.FIRSTNAME) == 1
    assert cm.cell(Label.LASTNAME, None) == 1
    assert np.allclose(cm.normalized().sum(axis=1)[cm.counts.sum(axis=1) > 0], 1.0)


def test_doc_mismatch():
    doc = doc3()
    with pytest.raises(DocMismatch):
        entity_counts(AnnotationSet("d"), AnnotationSet("other"), doc)
    with pytest.raises(DocMismatch):
        token_counts([Entity.of(0, 50, "CITY")], [], doc)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_match_oracles(seed):
    rng = random.Random(seed)
    items = []
    for k in range(3):
        doc = oracles.random_document(rng, f"d{k}")
        items.append((doc, oracles.random_entities(rng, doc), oracles.random_entities(rng, doc, overlapping=True)))
    for doc, gold, pred in items:
        ec = entity_counts(gold, pred, doc)
        tc = token_counts(gold, pred, doc)
        oe = oracles.oracle_entity_counts(gold, pred)
        ot = oracles.oracle_token_counts(doc, gold, pred)
        for l in Label:
            assert (ec[l].tp, ec[l].fp, ec[l].fn) == oe[l]
            assert (tc[l].tp, tc[l].fp, tc[l].fn) == ot[l]
        assert redacted_recall(gold, pred, doc) == oracles.oracle_redacted(doc, gold, pred)
    assert fully_redacted(items) == oracles.oracle_fully_redacted(items)
    assert np.array_equal(confusion_matrix(items).counts, oracles.oracle_confusion(items))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_corpus_invariants(seed):
    rng = random.Random(seed)
    items = []
    for k in range(4):
        doc = oracles.random_document(rng, f"d{k}")
        items.append((doc, oracles.random_entities(rng, doc), oracles.random_entities(rng, doc)))
    rep = evaluate(items)
    assert rep.token_micro.recall <= rep.redacted + 1e-12
    per_doc = [redacted_recall(g, p, d) for d, g, p in items]
    assert (rep.fully_redacted == 1.0) == all(r is None or r == 1.0 for r in per_doc)
    # hybrid redaction dominates both components
    model = [oracles.random_entities(rng, d) for d, _, _ in items]
    merged = [merge(p, m) for (_, _, p), m in zip(items, model)]
    r_rules = evaluate(items).redacted
    r_model = evaluate((d, g, m) for (d, g, _), m in zip(items, model)).redacted
    r_hyb = evaluate((d, g, h) for (d, g, _), h in zip(items, merged)).redacted
    assert r_hyb >= max(r_rules, r_model)


def test_report_outputs(tmp_path, small_bundle):
    items = [(prepare(d), g, list(g)) for d, g in small_bundle.items()[:10]]
    rep = evaluate(items)
    s = rep.summary()
    assert all(s[k] == 100.0 for k in ("precision", "recall", "f1", "redacted", "fully_redacted", "entity_f1"))
    rep.write_json(tmp_path / "m.json")
    rep.write_csv(tmp_path / "m.csv")
    rep.confusion.write_csv(tmp_path / "c.csv", normalized=True)
    assert (tmp_path / "m.csv").read_text().startswith("label,level")
    a = evaluate(items[:4])
    a += evaluate(items[4:])
    assert a.to_dict() == rep.to_dict()


def _sets(doc, rng, n=3):
    return AnnotationSet(doc.doc_id, tuple(oracles.random_entities(rng, doc, n)))


@given(st.integers(0, 2**31))
def test_iaa_symmetric(seed):
    rng = random.Random(seed)
    docs = [oracles.random_document(rng, f"d{k}") for k in range(3)]
    a = [_sets(d, rng) for d in docs]
    b = [_sets(d, rng) for d in docs]
    assert iaa(a, b, docs) == iaa(b, a, docs)


def test_iaa_identity_and_disjoint():
    doc = doc3()
    a = [AnnotationSet("d", (Entity.of(0, 2, "CITY"), Entity.of(6, 8, "DATE")))]
    same = iaa(a, a, [doc])
    assert all(v == 1.0 for level in same.values() for v in level.values())
    b = [AnnotationSet("d", (Entity.of(3, 5, "ZIP"),))]
    diff = iaa(a, b, [doc])
    assert diff["exact"]["micro"] == 0.0 and diff["token"]["micro"] == 0.0
    with pytest.raises(DocSetMismatch):
        iaa(a, [AnnotationSet("x")], [doc])


def test_iaa_both_empty_is_agreement():
    doc = doc3()
    empty = [AnnotationSet("d")]
    out = iaa(empty, empty, [doc])
    assert out["exact"]["micro"] == 1.0 and out["token"]["micro"] == 1.0


def test_ttest_examples():
    t = ttest_compare([1, 2, 3], [1, 2, 3])
    assert t.t == 0.0 and t.p == 1.0
    t = ttest_compare([1, 1.001, 0.999], [11, 11.001, 10.999])
    assert t.p < 0.001
    with pytest.raises(InsufficientSamples):
        ttest_compare([1], [2, 3])


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(0, 100), min_size=2, max_size=6),
    st.lists(st.floats(0, 100), min_size=2, max_size=6),
)
def test_ttest_matches_integration_oracle(a, b):
    res = ttest_compare(a, b)
    if not np.isfinite(res.t):
        return
    assert res.p == pytest.approx(min(1.0, oracles.t_two_sided_p(res.t, res.df)), rel=1e-9, abs=1e-14)


def test_drift():
    base = EntityStats()
    for _ in range(10):
        base.add([Entity.of(0, 1, "CITY"), Entity.of(2, 3, "DATE"), Entity.of(4, 5, "DATE")])
    rows = drift_report(base, base)
    assert all(r.relative_change == 0 and not r.alert for r in rows)
    half = EntityStats()
    for i in range(10):
        half.add([Entity.of(2, 3, "DATE"), Entity.of(4, 5, "DATE")] + ([Entity.of(0, 1, "CITY")] if i % 2 else []))
    alerts = {r.label for r in drift_report(half, base) if r.alert}
    assert alerts == {"CITY"}
    assert all(r.alert for r in drift_report(EntityStats(), base))
    assert EntityStats.from_dict(base.to_dict()) == base
