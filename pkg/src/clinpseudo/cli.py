"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .core import AnnotationError, AnnotationSet, Document
from .experiments import ExperimentError, ExperimentSetup, run_doc_type_ablation, run_learning_curve, write_ablation_csv
from .io import read_metadata_csv, read_standoff, write_predictions
from .metrics import EntityStats, MetricsError, drift_report, evaluate, iaa, write_drift_csv
from .pipeline import MODES, Annotator, annotate_corpus, pseudonymize_corpus, summarize, training_pairs
from .rules import RuleError, RuleSet, gate_rules, read_report_csv, rule_precision_report, write_report_csv
from .surrogates import SECRET_ENV, CohortKey, ReplacementOptions, SurrogateError, SurrogatePools, write_audit_csv
from .synth import GeneratorConfig, SynthError, SyntheticBundle, generate
from .tagger import LinearTaggerModel, TaggerError, load_external_predictions, predict, train_tagger
from .textprep import TokenizerConfig, prepare

log = logging.getLogger("clinpseudo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (
    OSError,
    AnnotationError,
    RuleError,
    TaggerError,
    SurrogateError,
    MetricsError,
    SynthError,
    ExperimentError,
    json.JSONDecodeError,
    yaml.YAMLError,
)


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class PipelineConfig:
    rules_file: str | None = None
    pools_file: str | None = None
    model_file: str | None = None
    metadata_csv: str | None = None
    templates_file: str | None = None
    lexicon_dir: str | None = None
    key_file: str | None = None
    rule_report: str | None = None
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    threshold: float = 98.0
    cohort: str = "default"
    shift_range: int = 365
    jobs: int = 1
    report_formats: tuple[str, ...] = ("json", "csv")

    _PATH_FIELDS = ("rules_file", "pools_file", "model_file", "metadata_csv", "templates_file", "lexicon_dir", "key_file", "rule_report")

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        if path is None:
            return cls()
        p = Path(path)
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "tokenizer" in raw:
            raw["tokenizer"] = TokenizerConfig.from_dict(raw["tokenizer"])
        if "report_formats" in raw:
            raw["report_formats"] = tuple(raw["report_formats"])
        cfg = cls(**raw)
        for name in cls._PATH_FIELDS:
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str(p.parent / value))
        return cfg

    def validate(self) -> None:
        if not 0.0 <= float(self.threshold) <= 100.0:
            raise ConfigError(f"threshold {self.threshold} outside [0, 100]")
        if self.shift_range < 1:
            raise ConfigError("shift_range must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for name in self._PATH_FIELDS:
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise FileNotFoundError(f"{name}: {value} does not exist")


def _override(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    mapping = {
        "rules": "rules_file",
        "pools": "pools_file",
        "model": "model_file",
        "metadata": "metadata_csv",
        "templates": "templates_file",
        "lexicons": "lexicon_dir",
        "key_file": "key_file",
        "rule_report": "rule_report",
        "threshold": "threshold",
        "cohort": "cohort",
        "shift_range": "shift_range",
        "jobs": "jobs",
    }
    for arg, attr in mapping.items():
        value = getattr(args, arg, None)
        if value is not None:
            setattr(cfg, attr, value)
    cfg.validate()
    return cfg


# --- helpers ---------------------------------------------------------------------------


def _corpus_file(path: str) -> Path:
    p = Path(path)
    return p / "corpus.jsonl" if p.is_dir() else p


def _load_corpus(path: str) -> list[tuple[Document, AnnotationSet]]:
    f = _corpus_file(path)
    if not f.exists():
        raise FileNotFoundError(f"corpus file {f} not found")
    return read_standoff(f)


def _load_metadata(cfg: PipelineConfig, corpus_path: str) -> dict:
    if cfg.metadata_csv:
        return read_metadata_csv(cfg.metadata_csv)
    p = Path(corpus_path)
    candidate = (p if p.is_dir() else p.parent) / "metadata.csv"
    return read_metadata_csv(candidate) if candidate.exists() else {}


def _rules(cfg: PipelineConfig) -> RuleSet:
    return RuleSet.load(cfg.rules_file)


def _enabled(cfg: PipelineConfig, rules: RuleSet):
    if not cfg.rule_report:
        return None
    enabled = gate_rules(read_report_csv(cfg.rule_report), cfg.threshold)
    log.info("gating at %.1f%% keeps %d rules", cfg.threshold, len(enabled))
    return enabled


def _annotator(cfg: PipelineConfig, mode: str) -> Annotator:
    model = None
    if mode in ("model", "hybrid"):
        if not cfg.model_file:
            raise UsageError(f"mode {mode} needs --model")
        model = LinearTaggerModel.load(cfg.model_file)
    rules = _rules(cfg) if mode in ("rules", "hybrid") else None
    enabled = _enabled(cfg, rules) if rules is not None else None
    return Annotator(mode, rules, enabled, model, cfg.tokenizer)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


# --- commands --------------------------------------------------------------------------


def cmd_synth(args, cfg: PipelineConfig) -> int:
    gc = GeneratorConfig(
        seed=args.seed,
        doc_count=args.docs,
        docs_per_patient=args.docs_per_patient,
        templates_path=cfg.templates_file,
        lexicon_dir=cfg.lexicon_dir,
    )
    started = time.perf_counter()
    bundle = generate(gc)
    bundle.write(args.out)
    log.info("wrote %d documents, %d patients to %s in %.2fs", len(bundle), len(bundle.metadata), args.out, time.perf_counter() - started)
    return EXIT_OK


def cmd_train(args, cfg: PipelineConfig) -> int:
    train = training_pairs(_load_corpus(args.corpus), cfg.tokenizer)
    if not train:
        raise TaggerError("training corpus is empty")
    dev = [(prepare(d, cfg.tokenizer), g) for d, g in _load_corpus(args.dev)] if args.dev else []
    if args.epochs == 0:
        log.warning("epochs=0: the model has zero weights and will predict no entities")
    log_rows = []

    def on_epoch(epoch, mistakes, snapshot):
        row = {"epoch": epoch + 1, "mistakes": mistakes}
        if dev:
            model = snapshot()
            report = evaluate((d, g, predict(model, d, cfg.tokenizer)) for d, g in dev)
            row["dev_token_f1"] = round(100 * report.token_micro.f1, 2)
        log_rows.append(row)
        log.info("epoch %d: %s", epoch + 1, row)

    model = train_tagger(train, epochs=args.epochs, seed=args.seed, cfg=cfg.tokenizer, log=on_epoch)
    model.save(args.out)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.json")
    _write_json(log_path, log_rows)
    return EXIT_OK


def cmd_annotate(args, cfg: PipelineConfig) -> int:
    annotator = _annotator(cfg, args.mode)
    corpus = _load_corpus(args.corpus)
    meta = _load_metadata(cfg, args.corpus)
    docs = [d for d, _ in corpus]
    started = time.perf_counter()
    preds = annotate_corpus(docs, meta, annotator, cfg.jobs)
    summary = summarize(preds, started)
    out = Path(args.out)
    write_predictions(out, {d.doc_id: p for d, p in zip(docs, preds)})
    info = {"mode": args.mode, "jobs": cfg.jobs, **summary.to_dict()}
    _write_json(Path(args.summary) if args.summary else out.with_suffix(".summary.json"), info)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_pseudonymize(args, cfg: PipelineConfig) -> int:
    # resolve the secret before touching the output directory
    if cfg.key_file:
        key = CohortKey.from_file(cfg.cohort, cfg.key_file)
    else:
        key = CohortKey.from_env(cfg.cohort)
    corpus = _load_corpus(args.corpus)
    meta = _load_metadata(cfg, args.corpus)
    docs = [d for d, _ in corpus]
    pools = SurrogatePools.load(cfg.pools_file)
    entities = None
    annotator = None
    if args.predictions:
        by_doc = load_external_predictions(args.predictions, docs)
        entities = [by_doc.get(d.doc_id, []) for d in docs]
    elif args.use_gold:
        entities = [list(g) for _, g in corpus]
    else:
        annotator = _annotator(cfg, args.mode)
    opts = ReplacementOptions(cfg.shift_range, args.separate_birthdate_shift)

    started = time.perf_counter()
    results = pseudonymize_corpus(docs, meta, key, pools, annotator, entities, opts, cfg.jobs)
    summary = summarize((ents for ents, _ in results), started)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".pseudo-", dir=out.parent))
    try:
        stats = EntityStats()
        with open(staging / "pseudonymized.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for doc, (ents, res) in zip(docs, results):
                stats.add(e for e in ents)
                rec = {
                    "doc_id": doc.doc_id,
                    "doc_type": doc.doc_type,
                    "patient_id": doc.patient_id,
                    "text": res.text,
                    "offsets": res.offsets.to_json(),
                }
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
        write_audit_csv(staging / "audit.csv", (r for _, res in results for r in res.records))
        stats.write_json(staging / "stats.json")
        info = {"cohort_id": key.cohort_id, "jobs": cfg.jobs, **summary.to_dict()}
        _write_json(staging / "summary.json", info)
        if out.exists():
            shutil.rmtree(out)
        staging.rename(out)
    finally:
        if staging.exists():
            shutil.rmtree(staging)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    corpus = _load_corpus(args.corpus)
    docs = {d.doc_id: prepare(d, cfg.tokenizer) for d, _ in corpus}
    preds = load_external_predictions(args.predictions, docs)
    report = evaluate((docs[d.doc_id], g, preds.get(d.doc_id, [])) for d, g in corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "metrics.json")
    report.write_csv(out / "metrics.csv")
    report.confusion.write_csv(out / "confusion.csv")
    report.confusion.write_csv(out / "confusion_normalized.csv", normalized=True)
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_iaa(args, cfg: PipelineConfig) -> int:
    a = _load_corpus(args.a)
    b = _load_corpus(args.b)
    docs = {d.doc_id: prepare(d, cfg.tokenizer) for d, _ in a}
    for d, _ in b:
        if d.doc_id in docs and d.text != docs[d.doc_id].text:
            raise MetricsError(f"document {d.doc_id} differs between the two annotation files")
    result = iaa([g for _, g in a], [g for _, g in b], docs)
    if args.out:
        _write_json(Path(args.out), result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _bundle(path: str, cfg: PipelineConfig) -> SyntheticBundle:
    corpus = _load_corpus(path)
    return SyntheticBundle([d for d, _ in corpus], [g for _, g in corpus], _load_metadata(cfg, path))


def cmd_curve(args, cfg: PipelineConfig) -> int:
    setup = ExperimentSetup(epochs=args.epochs, threshold=cfg.threshold, jobs=cfg.jobs, split_seed=args.split_seed)
    grid = run_learning_curve(_bundle(args.corpus, cfg), args.sizes, args.seeds, setup, _rules(cfg))
    grid.write_csv(args.out, args.system)
    return EXIT_OK


def cmd_ablate(args, cfg: PipelineConfig) -> int:
    setup = ExperimentSetup(epochs=args.epochs, threshold=cfg.threshold, jobs=cfg.jobs, split_seed=args.split_seed)
    grid = run_doc_type_ablation(_bundle(args.corpus, cfg), args.types, args.seeds, args.train_size, setup, _rules(cfg))
    write_ablation_csv(args.out, grid, args.system)
    return EXIT_OK


def cmd_drift(args, cfg: PipelineConfig) -> int:
    rows = drift_report(EntityStats.read_json(args.batch), EntityStats.read_json(args.baseline), args.alert)
    write_drift_csv(args.out, rows)
    alerts = [r.label for r in rows if r.alert]
    print(json.dumps({"alerts": alerts}))
    return EXIT_OK


def cmd_rule_report(args, cfg: PipelineConfig) -> int:
    rules = _rules(cfg)
    meta = _load_metadata(cfg, args.corpus)
    items = [(prepare(d, cfg.tokenizer), list(g), meta.get(d.patient_id)) for d, g in _load_corpus(args.corpus)]
    report = rule_precision_report(items, rules)
    write_report_csv(args.out, report)
    kept = sorted(str(r) for r in gate_rules(report, cfg.threshold))
    print(json.dumps({"threshold": cfg.threshold, "kept": kept}))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON pipeline configuration")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="clinpseudo", description="Hybrid de-identification and pseudonymization of clinical text.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--docs", type=int, default=100)
    s.add_argument("--docs-per-patient", type=float, default=3.0)
    s.add_argument("--templates")
    s.add_argument("--lexicons", help="directory holding the lexicon text files")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train the built-in tagger")
    s.add_argument("--corpus", required=True)
    s.add_argument("--dev")
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="model file")
    s.add_argument("--log", help="training log (JSON); defaults to <out>.log.json")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("annotate", parents=[common], help="detect identifiers")
    s.add_argument("--corpus", required=True)
    s.add_argument("--mode", choices=MODES, default="hybrid")
    s.add_argument("--model")
    s.add_argument("--rules")
    s.add_argument("--metadata")
    s.add_argument("--rule-report", help="rule precision CSV used for gating")
    s.add_argument("--threshold", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--summary")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("pseudonymize", parents=[common], help="replace identifiers with surrogates")
    s.add_argument("--corpus", required=True)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--predictions", help="use these predictions instead of annotating")
    src.add_argument("--use-gold", action="store_true", help="replace the corpus gold entities")
    s.add_argument("--mode", choices=MODES, default="hybrid")
    s.add_argument("--model")
    s.add_argument("--rules")
    s.add_argument("--metadata")
    s.add_argument("--rule-report")
    s.add_argument("--threshold", type=float)
    s.add_argument("--pools")
    s.add_argument("--cohort")
    s.add_argument("--key-file", help=f"hex secret file; otherwise ${SECRET_ENV} is read")
    s.add_argument("--shift-range", type=int)
    s.add_argument("--separate-birthdate-shift", action="store_true")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_pseudonymize)

    s = sub.add_parser("evaluate", parents=[common], help="score predictions against gold")
    s.add_argument("--corpus", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("iaa", parents=[common], help="inter-annotator agreement")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_iaa)

    for name, helptext in (("curve", "learning curve"), ("ablate", "document-type ablation")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--corpus", required=True)
        s.add_argument("--metadata")
        s.add_argument("--rules")
        s.add_argument("--seeds", type=_int_list, default=[0])
        s.add_argument("--epochs", type=int, default=5)
        s.add_argument("--split-seed", type=int, default=0)
        s.add_argument("--threshold", type=float)
        s.add_argument("--system", choices=("hybrid", "model", "rules"), default="hybrid")
        s.add_argument("--out", required=True)
        if name == "curve":
            s.add_argument("--sizes", type=_int_list, required=True)
            s.set_defaults(func=cmd_curve)
        else:
            s.add_argument("--types", type=_str_list, required=True)
            s.add_argument("--train-size", type=int)
            s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("drift", parents=[common], help="compare entity statistics with a baseline")
    s.add_argument("--batch", required=True)
    s.add_argument("--baseline", required=True)
    s.add_argument("--alert", type=float, default=0.20, help="relative change that raises an alert")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_drift)

    s = sub.add_parser("rule-report", parents=[common], help="score each rule on an annotated corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--rules")
    s.add_argument("--metadata")
    s.add_argument("--threshold", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rule_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _override(PipelineConfig.load(args.config), args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"clinpseudo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"clinpseudo {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"clinpseudo {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"clinpseudo {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"clinpseudo {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
