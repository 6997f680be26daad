"""Slow, obviously-correct reference implementations used to check the fast code."""

from __future__ import annotations

import random
import string

import mpmath
import numpy as np

from clinpseudo.core import LABELS, Document, Entity, Label, Span
from clinpseudo.tagger import N_TAGS, TAGS
from clinpseudo.textprep import prepare

# --- random instances ------------------------------------------------------------------


def random_document(rng: random.Random, doc_id: str = "d0", max_tokens: int = 10) -> Document:
    n = rng.randint(1, max_tokens)
    words = ["".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(1, 5))) for _ in range(n)]
    text = ""
    for w in words:
        text += " " * rng.randint(0 if not text else 1, 2) + w
    return prepare(Document(doc_id, text))


def random_entities(rng: random.Random, doc: Document, max_entities: int = 4, overlapping: bool = False) -> list[Entity]:
    """Random character spans (not necessarily token aligned)."""
    n = len(doc.text)
    out: list[Entity] = []
    for _ in range(rng.randint(0, max_entities)):
        b = rng.randrange(n)
        e = rng.randint(b + 1, min(n, b + 12))
        cand = Entity(Span(b, e), rng.choice(LABELS[:4]))
        if overlapping or all(c.end <= b or e <= c.begin for c in out):
            out.append(cand)
    return out


# --- metric oracles --------------------------------------------------------------------


def oracle_entity_counts(gold, pred) -> dict[Label, tuple[int, int, int]]:
    out = {}
    for l in LABELS:
        g = [(e.begin, e.end) for e in gold if e.label == l]
        p = [(e.begin, e.end) for e in pred if e.label == l]
        g_set, p_set = set(g), set(p)
        out[l] = (len(p_set & g_set), len(p_set - g_set), len(g_set - p_set))
    return out


def _tok_label(doc: Document, entities, i: int):
    tok = doc.tokens[i]
    chars = set(range(tok.begin, tok.end))
    for e in sorted(entities, key=lambda x: (x.begin, x.end, x.label.value)):
        if chars & set(range(e.begin, e.end)):
            return e.label
    return None


def oracle_token_table(doc: Document, gold, pred) -> list[tuple[Label | None, Label | None]]:
    return [(_tok_label(doc, gold, i), _tok_label(doc, pred, i)) for i in range(len(doc.tokens))]


def oracle_token_counts(doc, gold, pred) -> dict[Label, tuple[int, int, int]]:
    table = oracle_token_table(doc, gold, pred)
    out = {}
    for l in LABELS:
        tp = sum(1 for g, p in table if g == l and p == l)
        fp = sum(1 for g, p in table if p == l and g != l)
        fn = sum(1 for g, p in table if g == l and p != l)
        out[l] = (tp, fp, fn)
    return out


def oracle_redacted(doc, gold, pred) -> float | None:
    table = oracle_token_table(doc, gold, pred)
    gold_toks = [p for g, p in table if g is not None]
    if not gold_toks:
        return None
    return sum(1 for p in gold_toks if p is not None) / len(gold_toks)


def oracle_fully_redacted(items) -> float:
    if not items:
        return 0.0
    ok = 0
    for doc, gold, pred in items:
        r = oracle_redacted(doc, gold, pred)
        ok += r is None or r == 1.0
    return ok / len(items)


def oracle_confusion(items) -> np.ndarray:
    axis = [None] + list(LABELS)
    m = np.zeros((len(axis), len(axis)), dtype=np.int64)
    for doc, gold, pred in items:
        for g, p in oracle_token_table(doc, gold, pred):
            m[axis.index(g), axis.index(p)] += 1
    return m


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


# --- exhaustive constrained decoding ---------------------------------------------------


def _valid_step(prev: int | None, nxt: int) -> bool:
    tag = TAGS[nxt]
    if not tag.startswith("I-"):
        return True
    return prev is not None and TAGS[prev][2:] == tag[2:]


def brute_force_best(emissions: np.ndarray, transitions: np.ndarray) -> tuple[float, int]:
    """Maximum score over every allowed tag sequence, by full enumeration.

    Paths are grown one position at a time, keeping every valid prefix (no
    dynamic programming, no pruning).  Returns (best score, number of paths).
    """
    n = emissions.shape[0]
    start = np.array([_valid_step(None, t) for t in range(N_TAGS)])
    step = np.array([[_valid_step(a, b) for b in range(N_TAGS)] for a in range(N_TAGS)])
    last = np.flatnonzero(start)
    score = emissions[0, last].astype(np.float64)
    for i in range(1, n):
        prev_idx, nxt = np.nonzero(step[last])
        score = score[prev_idx] + transitions[last[prev_idx], nxt] + emissions[i, nxt]
        last = nxt
    return float(score.max()), int(score.size)


def dyadic_scores(rng: np.random.Generator, shape) -> np.ndarray:
    """Random scores that are multiples of 1/8, so every path sum is exact in float64."""
    return rng.integers(-40, 41, size=shape).astype(np.float64) / 8.0


# --- Student t -------------------------------------------------------------------------


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided p-value by numerically integrating the t density at 50 digits."""
    with mpmath.workdps(50):
        nu = mpmath.mpf(df)
        c = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))
        tail = mpmath.quad(lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / 2), [abs(t), mpmath.inf])
        return float(2 * tail)


# --- calendar --------------------------------------------------------------------------


def _is_leap(y: int) -> bool:
    return y % 4 == 0 and (y % 100 != 0 or y % 400 == 0)


_MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)


def day_number(y: int, m: int, d: int) -> int:
    """Days since 0001-01-01 by explicit counting."""
    days = sum(366 if _is_leap(k) else 365 for k in range(1, y))
    days += sum(_MONTH_DAYS[k] + (k == 1 and _is_leap(y)) for k in range(m - 1))
    return days + d - 1


def from_day_number(n: int) -> tuple[int, int, int]:
    y = 1
    while True:
        size = 366 if _is_leap(y) else 365
        if n < size:
            break
        n -= size
        y += 1
    for m in range(12):
        size = _MONTH_DAYS[m] + (m == 1 and _is_leap(y))
        if n < size:
            return y, m + 1, n + 1
        n -= size
    raise AssertionError("unreachable")
