"""Hybrid rule/model de-identification and consistent pseudonymization of clinical notes."""

__version__ = "0.1.0"

from .core import AnnotationSet, Document, Entity, Label, LABELS, PatientMetadata, Span, Token
from .hybrid import merge
from .metrics import evaluate, iaa
from .pipeline import Annotator, annotate_corpus, pseudonymize_corpus
from .rules import RuleSet, default_rules, gate_rules
from .surrogates import CohortKey, SurrogatePools, pseudonymize_document
from .tagger import LinearTaggerModel, predict, train_tagger, viterbi_decode
from .textprep import TokenizerConfig, prepare, tokenize

__all__ = [
    "AnnotationSet",
    "Annotator",
    "CohortKey",
    "Document",
    "Entity",
    "LABELS",
    "Label",
    "LinearTaggerModel",
    "PatientMetadata",
    "RuleSet",
    "Span",
    "SurrogatePools",
    "Token",
    "TokenizerConfig",
    "annotate_corpus",
    "default_rules",
    "evaluate",
    "gate_rules",
    "iaa",
    "merge",
    "predict",
    "prepare",
    "pseudonymize_corpus",
    "pseudonymize_document",
    "tokenize",
    "train_tagger",
    "viterbi_decode",
]
