"""Corpus-level orchestration: annotation in rules / model / hybrid mode and pseudonymization.

Work is spread over a process pool when ``jobs > 1``; results always come
back in input order so runs are reproducible regardless of the pool size.
"""

from __future__ import annotations

import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .core import Document, Entity, PatientMetadata
from .hybrid import merge
from .rules import RuleId, RuleSet, default_rules, gate_rules, rule_precision_report, run_rule_pipeline
from .surrogates import CohortKey, PseudoResult, ReplacementOptions, SurrogatePools, pseudonymize_document
from .tagger import LinearTaggerModel, predict
from .textprep import DEFAULT_CONFIG, TokenizerConfig, merge_intra_word_entities, prepare

MODES = ("rules", "model", "hybrid")


@dataclass(frozen=True)
class Annotator:
    mode: str = "hybrid"
    rules: RuleSet | None = None
    enabled_rules: frozenset[RuleId] | None = None  # None means every defined rule
    model: LinearTaggerModel | None = None
    tokenizer: TokenizerConfig = DEFAULT_CONFIG

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.mode in ("model", "hybrid") and self.model is None:
            raise ValueError(f"mode {self.mode} needs a trained model")
        if self.mode in ("rules", "hybrid") and self.rules is None:
            object.__setattr__(self, "rules", default_rules())

    def rule_entities(self, doc: Document, meta: PatientMetadata | None) -> list[Entity]:
        return run_rule_pipeline(doc, meta, self.rules, self.enabled_rules)

    def model_entities(self, doc: Document) -> list[Entity]:
        return predict(self.model, doc, self.tokenizer)

    def annotate(self, doc: Document, meta: PatientMetadata | None = None) -> list[Entity]:
        if not doc.tokens:
            doc = prepare(doc, self.tokenizer)
        if self.mode == "rules":
            return self.rule_entities(doc, meta)
        if self.mode == "model":
            return self.model_entities(doc)
        return merge(self.rule_entities(doc, meta), self.model_entities(doc))


def _chunks(n: int, jobs: int) -> int:
    return max(1, n // (jobs * 8))


_WORKER: dict = {}


def _init_annotate(annotator: Annotator) -> None:
    _WORKER["annotator"] = annotator


def _annotate_one(args: tuple[Document, PatientMetadata | None]) -> list[Entity]:
    doc, meta = args
    return _WORKER["annotator"].annotate(doc, meta)


def annotate_corpus(
    docs: Sequence[Document],
    metadata: Mapping[str, PatientMetadata],
    annotator: Annotator,
    jobs: int = 1,
) -> list[list[Entity]]:
    work = [(d, metadata.get(d.patient_id) if d.patient_id else None) for d in docs]
    if jobs <= 1 or len(work) < 2:
        return [annotator.annotate(d, m) for d, m in work]
    with ProcessPoolExecutor(jobs, initializer=_init_annotate, initargs=(annotator,)) as pool:
        return list(pool.map(_annotate_one, work, chunksize=_chunks(len(work), jobs)))


def _init_pseudo(annotator, key, pools, opts) -> None:
    _WORKER.update(annotator=annotator, key=key, pools=pools, opts=opts)


def _pseudo_one(args) -> tuple[list[Entity], PseudoResult]:
    doc, meta, entities = args
    if entities is None:
        entities = _WORKER["annotator"].annotate(doc, meta)
    pid = doc.patient_id or doc.doc_id
    return entities, pseudonymize_document(doc, entities, _WORKER["key"], pid, _WORKER["pools"], _WORKER["opts"])


def pseudonymize_corpus(
    docs: Sequence[Document],
    metadata: Mapping[str, PatientMetadata],
    key: CohortKey,
    pools: SurrogatePools,
    annotator: Annotator | None = None,
    entities: Sequence[Sequence[Entity]] | None = None,
    opts: ReplacementOptions = ReplacementOptions(),
    jobs: int = 1,
) -> list[tuple[list[Entity], PseudoResult]]:
    """Detect (unless ``entities`` is given) and replace identifiers in every document.

    Real metadata values are removed from the surrogate pools first so a
    patient's name can never be drawn as someone else's surrogate.
    """
    if entities is None and annotator is None:
        raise ValueError("either an annotator or precomputed entities are required")
    pools = pools.excluding(v for m in metadata.values() for vals in m.values_by_label().values() for v in vals)
    work = [
        (d, metadata.get(d.patient_id) if d.patient_id else None, None if entities is None else list(entities[i]))
        for i, d in enumerate(docs)
    ]
    if jobs <= 1 or len(work) < 2:
        _init_pseudo(annotator, key, pools, opts)
        try:
            return [_pseudo_one(w) for w in work]
        finally:
            _WORKER.clear()
    with ProcessPoolExecutor(jobs, initializer=_init_pseudo, initargs=(annotator, key, pools, opts)) as pool:
        return list(pool.map(_pseudo_one, work, chunksize=_chunks(len(work), jobs)))


@dataclass
class RunSummary:
    docs: int = 0
    entities: Counter = field(default_factory=Counter)
    wall_time: float = 0.0

    @property
    def docs_per_sec(self) -> float:
        return self.docs / self.wall_time if self.wall_time > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "docs": self.docs,
            "entities": dict(sorted(self.entities.items())),
            "wall_time_s": round(self.wall_time, 3),
            "docs_per_sec": round(self.docs_per_sec, 2),
        }


def summarize(predictions: Iterable[Sequence[Entity]], started: float) -> RunSummary:
    s = RunSummary()
    for ents in predictions:
        s.docs += 1
        s.entities.update(e.label.value for e in ents)
    s.wall_time = time.perf_counter() - started
    return s


def training_pairs(items: Iterable[tuple[Document, Iterable[Entity]]], cfg: TokenizerConfig = DEFAULT_CONFIG):
    """Tokenize and fuse intra-word gold entities, ready for the tagger."""
    out = []
    for doc, gold in items:
        doc = prepare(doc, cfg)
        out.append((doc, merge_intra_word_entities(doc, list(gold))))
    return out


def gated_rules_from_dev(
    dev: Iterable[tuple[Document, Iterable[Entity]]],
    metadata: Mapping[str, PatientMetadata],
    rules: RuleSet,
    threshold: float = 98.0,
    cfg: TokenizerConfig = DEFAULT_CONFIG,
) -> tuple[frozenset[RuleId], dict]:
    """Score every rule on a development set and keep those reaching ``threshold``."""
    items = [(prepare(d, cfg), list(g), metadata.get(d.patient_id)) for d, g in dev]
    report = rule_precision_report(items, rules)
    return gate_rules(report, threshold), report
