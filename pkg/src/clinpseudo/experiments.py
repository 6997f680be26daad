"""Learning-curve and document-type ablation harnesses over a synthetic bundle."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Document, Entity
from .hybrid import merge
from .metrics import MetricsReport, TTest, evaluate, ttest_compare
from .pipeline import Annotator, annotate_corpus, gated_rules_from_dev, training_pairs
from .rules import RuleSet, default_rules
from .synth import SyntheticBundle, split
from .tagger import train_tagger
from .textprep import prepare

SYSTEMS = ("hybrid", "model", "rules")
TABLE_COLUMNS = ("precision", "recall", "f1", "redacted", "fully_redacted")


class ExperimentError(ValueError):
    pass


class SizeTooLarge(ExperimentError):
    pass


class UnknownDocType(ExperimentError):
    pass


@dataclass
class Cell:
    key: str | int  # training size, or "<type>:included" / "<type>:excluded"
    seed: int
    reports: dict[str, MetricsReport]


@dataclass
class ExperimentGrid:
    axis: str
    cells: list[Cell] = field(default_factory=list)
    tests: dict[str, dict[str, TTest]] = field(default_factory=dict)

    def keys(self) -> list:
        out = []
        for c in self.cells:
            if c.key not in out:
                out.append(c.key)
        return out

    def values(self, key, metric: str, system: str = "hybrid") -> list[float]:
        return [c.reports[system].summary()[metric] for c in self.cells if c.key == key]

    def mean_sd(self, key, metric: str, system: str = "hybrid") -> tuple[float, float]:
        vals = self.values(key, metric, system)
        return statistics.fmean(vals), (statistics.stdev(vals) if len(vals) > 1 else 0.0)

    def rows(self, system: str = "hybrid") -> list[dict]:
        out = []
        for key in self.keys():
            row = {self.axis: key, "seeds": len(self.values(key, "f1", system))}
            for m in TABLE_COLUMNS:
                mean, sd = self.mean_sd(key, m, system)
                row[m] = mean
                row[f"{m}_sd"] = sd
            out.append(row)
        return out

    def write_csv(self, path: str | Path, system: str = "hybrid") -> None:
        rows = self.rows(system)
        cols = [self.axis, "seeds"] + [c for m in TABLE_COLUMNS for c in (m, f"{m}_sd")]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([r[c] if c in (self.axis, "seeds") else f"{r[c]:.2f}" for c in cols])


@dataclass(frozen=True)
class ExperimentSetup:
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    split_seed: int = 0
    epochs: int = 5
    threshold: float = 98.0
    jobs: int = 1


def _prepare_split(corpus: SyntheticBundle, setup: ExperimentSetup, rules: RuleSet):
    train, dev, test = split(corpus, setup.ratios, setup.split_seed)
    enabled, _ = gated_rules_from_dev(dev.items(), corpus.metadata, rules, setup.threshold)
    return train, test, enabled


def _evaluate(docs: Sequence[Document], gold, preds) -> MetricsReport:
    return evaluate(zip(docs, gold, preds))


def _sample(n_avail: int, size: int, seed: int) -> list[int]:
    rng = np.random.default_rng([seed, 4])
    return sorted(int(i) for i in rng.choice(n_avail, size=size, replace=False))


def _run_systems(
    train_items,
    test_docs: Sequence[Document],
    test_gold,
    metadata,
    rules: RuleSet,
    enabled,
    seed: int,
    setup: ExperimentSetup,
    rule_preds: list[list[Entity]] | None,
) -> dict[str, MetricsReport]:
    model = train_tagger(train_items, epochs=setup.epochs, seed=seed)
    model_preds = annotate_corpus(test_docs, metadata, Annotator("model", model=model), setup.jobs)
    if rule_preds is None:
        rule_preds = annotate_corpus(test_docs, metadata, Annotator("rules", rules, enabled), setup.jobs)
    hybrid_preds = [merge(r, m) for r, m in zip(rule_preds, model_preds)]
    return {
        "hybrid": _evaluate(test_docs, test_gold, hybrid_preds),
        "model": _evaluate(test_docs, test_gold, model_preds),
        "rules": _evaluate(test_docs, test_gold, rule_preds),
    }


def run_learning_curve(
    corpus: SyntheticBundle,
    sizes: Sequence[int],
    seeds: Sequence[int],
    setup: ExperimentSetup = ExperimentSetup(),
    rules: RuleSet | None = None,
) -> ExperimentGrid:
    """Train on random subsets of growing size and score all three systems on a fixed test split."""
    rules = rules or default_rules()
    train, test, enabled = _prepare_split(corpus, setup, rules)
    too_big = [s for s in sizes if s > len(train)]
    if too_big:
        raise SizeTooLarge(f"sizes {too_big} exceed the {len(train)} training documents")
    if any(s < 1 for s in sizes):
        raise ExperimentError("training sizes must be positive")
    train_items = training_pairs(train.items())
    test_docs = [prepare(d) for d in test.documents]
    rule_preds = annotate_corpus(test_docs, corpus.metadata, Annotator("rules", rules, enabled), setup.jobs)
    grid = ExperimentGrid("size")
    for size in sizes:
        for seed in seeds:
            chosen = [train_items[i] for i in _sample(len(train_items), size, seed)]
            reports = _run_systems(chosen, test_docs, test.gold, corpus.metadata, rules, enabled, seed, setup, rule_preds)
            grid.cells.append(Cell(size, seed, reports))
    return grid


def run_doc_type_ablation(
    corpus: SyntheticBundle,
    doc_types: Sequence[str],
    seeds: Sequence[int],
    train_size: int | None = None,
    setup: ExperimentSetup = ExperimentSetup(),
    rules: RuleSet | None = None,
) -> ExperimentGrid:
    """Train with and without each document type (same training size) and test on that type only."""
    rules = rules or default_rules()
    train, test, enabled = _prepare_split(corpus, setup, rules)
    for t in doc_types:
        if not any(d.doc_type == t for d in test.documents):
            raise UnknownDocType(f"document type {t!r} has no test documents")
    train_items = training_pairs(train.items())
    grid = ExperimentGrid("setting")
    for t in doc_types:
        test_idx = [i for i, d in enumerate(test.documents) if d.doc_type == t]
        test_docs = [prepare(test.documents[i]) for i in test_idx]
        test_gold = [test.gold[i] for i in test_idx]
        rule_preds = annotate_corpus(test_docs, corpus.metadata, Annotator("rules", rules, enabled), setup.jobs)
        pool_in = list(range(len(train_items)))
        pool_out = [i for i in pool_in if train_items[i][0].doc_type != t]
        if not pool_out:
            raise ExperimentError(f"no training documents left once {t} is excluded")
        n = min(train_size or len(pool_out), len(pool_out))
        for seed in seeds:
            for setting, pool in (("included", pool_in), ("excluded", pool_out)):
                chosen = [train_items[pool[k]] for k in _sample(len(pool), n, seed)]
                reports = _run_systems(chosen, test_docs, test_gold, corpus.metadata, rules, enabled, seed, setup, rule_preds)
                grid.cells.append(Cell(f"{t}:{setting}", seed, reports))
        if len(seeds) >= 2:
            grid.tests[t] = {
                m: ttest_compare(grid.values(f"{t}:included", m), grid.values(f"{t}:excluded", m))
                for m in ("f1", "fully_redacted")
            }
    return grid


def write_ablation_csv(path: str | Path, grid: ExperimentGrid, system: str = "hybrid") -> None:
    """One row per document type: included/excluded mean and sd for F1 and fully redacted, plus p-values."""
    types = []
    for key in grid.keys():
        t = str(key).rsplit(":", 1)[0]
        if t not in types:
            types.append(t)
    cols = ["doc_type"]
    for m in ("f1", "fully_redacted"):
        cols += [f"{m}_included", f"{m}_included_sd", f"{m}_excluded", f"{m}_excluded_sd", f"{m}_t", f"{m}_p"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for t in types:
            row = [t]
            for m in ("f1", "fully_redacted"):
                inc = grid.mean_sd(f"{t}:included", m, system)
                exc = grid.mean_sd(f"{t}:excluded", m, system)
                test = grid.tests.get(t, {}).get(m)
                row += [f"{inc[0]:.2f}", f"{inc[1]:.2f}", f"{exc[0]:.2f}", f"{exc[1]:.2f}"]
                row += [f"{test.t:.4f}", f"{test.p:.4g}"] if test else ["", ""]
            w.writerow(row)
