"""Tokenization, sentence starts, windowing and intra-word entity merging."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .core import Document, Entity, Span, Token

_LETTERS = r"[^\W\d_]+"
# French elided articles/pronouns at word start ("l'", "d'", "qu'") stand alone.
_CLITIC = r"(?<![^\W\d_])(?i:[cdjlmnst]|qu)['’]"
_WORD = rf"{_LETTERS}(?:[-'’]{_LETTERS})*"
_ALNUM = r"[^\W_]+(?:[-'’][^\W_]+)*"

_SPLIT_RE = re.compile(rf"{_CLITIC}|{_WORD}|\d+|\S")
_NOSPLIT_RE = re.compile(rf"{_CLITIC}|{_ALNUM}|\S")


@dataclass(frozen=True)
class TokenizerConfig:
    max_window: int = 384
    split_alnum: bool = True
    sentence_punct: frozenset[str] = field(default_factory=lambda: frozenset(".!?\n"))

    def __post_init__(self):
        if self.max_window < 1:
            raise ValueError("max_window must be >= 1")
        object.__setattr__(self, "sentence_punct", frozenset(self.sentence_punct))

    @classmethod
    def from_dict(cls, d: dict | None) -> "TokenizerConfig":
        d = dict(d or {})
        if "sentence_punct" in d:
            d["sentence_punct"] = frozenset(d["sentence_punct"])
        return cls(**d)


DEFAULT_CONFIG = TokenizerConfig()


@dataclass(frozen=True)
class Window:
    doc_id: str
    token_range: range
    char_span: Span

    def __len__(self) -> int:
        return len(self.token_range)


def tokenize(text: str, cfg: TokenizerConfig = DEFAULT_CONFIG) -> list[Token]:
    pattern = _SPLIT_RE if cfg.split_alnum else _NOSPLIT_RE
    return [Token(Span(m.start(), m.end()), m.group()) for m in pattern.finditer(text)]


def mark_sentence_starts(tokens: list[Token], text: str, cfg: TokenizerConfig = DEFAULT_CONFIG) -> list[Token]:
    """Flag sentence-initial tokens.

    A token opens a sentence when it is first, when a newline sits between it
    and the previous token, or when the previous token is sentence punctuation
    followed by whitespace (so "12.03.2020" and "a.b@c.fr" stay in one sentence).
    """
    newline_breaks = "\n" in cfg.sentence_punct
    out = []
    prev: Token | None = None
    for tok in tokens:
        if prev is None:
            start = True
        else:
            gap = text[prev.end:tok.begin]
            start = (newline_breaks and "\n" in gap) or (
                prev.text in cfg.sentence_punct and gap != "" and gap.isspace()
            )
        out.append(tok if tok.is_sentence_start == start else replace(tok, is_sentence_start=start))
        prev = tok
    return out


def prepare(doc: Document, cfg: TokenizerConfig = DEFAULT_CONFIG) -> Document:
    """Tokenize a document and mark its sentence starts."""
    tokens = mark_sentence_starts(tokenize(doc.text, cfg), doc.text, cfg)
    return replace(doc, tokens=tuple(tokens))


def segment_windows(doc: Document, cfg: TokenizerConfig = DEFAULT_CONFIG) -> list[Window]:
    """Greedy packing of whole sentences into windows of at most ``max_window`` tokens."""
    tokens = doc.tokens
    if not tokens:
        return []
    limit = cfg.max_window

    sentences: list[tuple[int, int]] = []
    start = 0
    for i in range(1, len(tokens)):
        if tokens[i].is_sentence_start:
            sentences.append((start, i))
            start = i
    sentences.append((start, len(tokens)))

    bounds: list[tuple[int, int]] = []
    cur_start = cur_end = 0
    for s, e in sentences:
        size = e - s
        if cur_end - cur_start + size <= limit:
            cur_end = e
            continue
        if cur_end > cur_start:
            bounds.append((cur_start, cur_end))
        # oversized sentence: hard cut, the remainder stays open for the next sentence
        while e - s > limit:
            bounds.append((s, s + limit))
            s += limit
        cur_start, cur_end = s, e
    if cur_end > cur_start:
        bounds.append((cur_start, cur_end))

    return [
        Window(doc.doc_id, range(a, b), Span(tokens[a].begin, tokens[b - 1].end))
        for a, b in bounds
    ]


def merge_intra_word_entities(doc: Document, entities: list[Entity]) -> list[Entity]:
    """Fuse entities glued inside one word ("JamesSmith") into one, keeping the last label."""
    ordered = sorted(entities, key=Entity.sort_key)
    out: list[Entity] = []
    text = doc.text
    for e in ordered:
        if out:
            prev = out[-1]
            joined = text[prev.begin:e.end]
            if prev.end == e.begin and not any(c.isspace() for c in joined):
                out[-1] = Entity(Span(prev.begin, e.end), e.label, e.source, e.lineage, e.score)
                continue
        out.append(e)
    return out
