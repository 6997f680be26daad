"""BIO coding, constrained Viterbi decoding and an averaged-perceptron linear tagger.

The tagger stands in for a neural encoder: hand-written token features give
per-tag emission scores and a transition matrix plays the role of the CRF
head.  Decoding is always constrained so that ``I-X`` only follows ``B-X`` or
``I-X``.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import LABELS, Document, Entity, Label, Span, token_index_ranges
from .io import read_prediction_records
from .textprep import DEFAULT_CONFIG, TokenizerConfig, prepare, segment_windows

TAGS: tuple[str, ...] = ("O",) + tuple(f"{p}-{l.value}" for l in LABELS for p in ("B", "I"))
TAG_INDEX = {t: i for i, t in enumerate(TAGS)}
N_TAGS = len(TAGS)
FEATURE_TEMPLATE_VERSION = 1
MODEL_FORMAT_VERSION = 1


class TaggerError(ValueError):
    pass


class Infeasible(TaggerError):
    pass


class EmptyCorpus(TaggerError):
    pass


class UnknownDoc(TaggerError):
    pass


class InvalidSpan(TaggerError):
    pass


def b_tag(label: Label) -> int:
    return TAG_INDEX[f"B-{label.value}"]


def i_tag(label: Label) -> int:
    return TAG_INDEX[f"I-{label.value}"]


def tag_label(tag: int) -> Label | None:
    return None if tag == 0 else LABELS[(tag - 1) // 2]


def is_inside(tag: int) -> bool:
    return tag != 0 and (tag - 1) % 2 == 1


def _constraints() -> tuple[np.ndarray, np.ndarray]:
    allowed = np.ones((N_TAGS, N_TAGS), dtype=bool)
    start = np.ones(N_TAGS, dtype=bool)
    for nxt in range(N_TAGS):
        if is_inside(nxt):
            start[nxt] = False
            label = tag_label(nxt)
            for prev in range(N_TAGS):
                allowed[prev, nxt] = prev in (b_tag(label), nxt)
    allowed.setflags(write=False)
    start.setflags(write=False)
    return allowed, start


ALLOWED, START_ALLOWED = _constraints()


def sequence_is_valid(tags: Sequence[int]) -> bool:
    if not len(tags):
        return True
    if not START_ALLOWED[tags[0]]:
        return False
    return all(ALLOWED[a, b] for a, b in zip(tags, tags[1:]))


# --- BIO coding ------------------------------------------------------------------------


def encode_bio(doc: Document, gold: Iterable[Entity]) -> list[int]:
    """One tag index per token; a token claimed by two entities keeps the first."""
    tags = [0] * len(doc.tokens)
    for e, rng in token_index_ranges(doc, sorted(gold, key=Entity.sort_key)):
        free = [i for i in rng if tags[i] == 0]
        for k, i in enumerate(free):
            tags[i] = b_tag(e.label) if k == 0 else i_tag(e.label)
    return tags


def decode_bio(tags: Sequence[int | str], doc: Document, source: str = "model") -> list[Entity]:
    """Turn maximal B/I runs into entities; an orphan ``I-X`` opens a new entity."""
    idx = [TAG_INDEX[t] if isinstance(t, str) else int(t) for t in tags]
    if len(idx) != len(doc.tokens):
        raise TaggerError(f"{len(idx)} tags for {len(doc.tokens)} tokens")
    out: list[Entity] = []
    start = None
    cur: Label | None = None

    def close(end_tok: int) -> None:
        if cur is not None:
            span = Span(doc.tokens[start].begin, doc.tokens[end_tok].end)
            out.append(Entity(span, cur, source))

    for i, t in enumerate(idx):
        label = tag_label(t)
        if label is not None and is_inside(t) and label is cur:
            continue
        close(i - 1)
        cur, start = label, i
    close(len(idx) - 1)
    return out


# --- decoding --------------------------------------------------------------------------


def viterbi_decode(
    emissions: np.ndarray,
    transitions: np.ndarray,
    allowed: np.ndarray = ALLOWED,
    start_allowed: np.ndarray = START_ALLOWED,
) -> list[int]:
    """Highest-scoring tag path among those the constraints allow.

    Score = sum of emissions + sum of transitions.  Ties resolve to the lowest
    tag index at every step.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    n, t = emissions.shape
    if n == 0:
        return []
    trans = np.where(allowed, np.asarray(transitions, dtype=np.float64), -np.inf)
    score = np.where(start_allowed, emissions[0], -np.inf)
    if not np.isfinite(score).any():
        raise Infeasible("no tag allowed at sequence start")
    back = np.empty((n, t), dtype=np.int64)
    for i in range(1, n):
        cand = score[:, None] + trans
        back[i] = cand.argmax(axis=0)
        score = cand[back[i], np.arange(t)] + emissions[i]
        if not np.isfinite(score).any():
            raise Infeasible(f"no feasible tag at position {i}")
    path = [int(score.argmax())]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    path.reverse()
    return path


def path_score(emissions: np.ndarray, transitions: np.ndarray, tags: Sequence[int]) -> float:
    s = float(sum(emissions[i, t] for i, t in enumerate(tags)))
    return s + float(sum(transitions[a, b] for a, b in zip(tags, tags[1:])))


# --- features --------------------------------------------------------------------------


def _shape(s: str, cap: int = 8) -> str:
    out = []
    for c in s[:cap]:
        if c.isdigit():
            out.append("d")
        elif c.isalpha():
            out.append("X" if c.isupper() else "x")
        else:
            out.append(c)
    return "".join(out)


def _short_shape(s: str) -> str:
    full = _shape(s, cap=len(s))
    out = []
    for c in full:
        if not out or out[-1] != c:
            out.append(c)
    return "".join(out)


def _char_class(s: str) -> str:
    if s.isdigit():
        return "digit"
    if s.isalpha():
        return "alpha"
    if any(c.isalnum() for c in s):
        return "mixed"
    return "punct"


def token_features(doc: Document) -> list[list[str]]:
    """Feature strings per token (template version 1)."""
    toks = doc.tokens
    lows = [t.text.lower() for t in toks]
    shapes = [_short_shape(t.text) for t in toks]
    n = len(toks)
    out = []
    for i, tok in enumerate(toks):
        w = tok.text
        lo = lows[i]
        f = [
            "bias",
            f"w={lo}",
            f"shape={_shape(w)}",
            f"sshape={shapes[i]}",
            f"class={_char_class(w)}",
            f"len={min(len(w), 12)}",
        ]
        if w[:1].isupper():
            f.append("title" if not w.isupper() else "upper")
        for k in (1, 2, 3):
            if len(lo) >= k:
                f.append(f"p{k}={lo[:k]}")
                f.append(f"s{k}={lo[-k:]}")
        if tok.is_sentence_start:
            f.append("sent_start")
        if i > 0 and toks[i - 1].end == tok.begin:
            f.append("glued")
        for off in (-2, -1, 1, 2):
            j = i + off
            if 0 <= j < n:
                f.append(f"w{off:+d}={lows[j]}")
                f.append(f"sh{off:+d}={shapes[j]}")
            else:
                f.append(f"w{off:+d}=<pad>")
        if i > 0:
            f.append(f"w-1|sh0={lows[i - 1]}|{shapes[i]}")
        if i + 1 < n:
            f.append(f"sh0|w+1={shapes[i]}|{lows[i + 1]}")
        out.append(f)
    return out


# --- model -----------------------------------------------------------------------------


@dataclass
class LinearTaggerModel:
    vocab: dict[str, int]  # feature string -> row in ``weights``; row 0 is reserved for unknown features
    weights: np.ndarray  # (len(vocab) + 1, N_TAGS)
    transitions: np.ndarray  # (N_TAGS, N_TAGS)
    template_version: int = FEATURE_TEMPLATE_VERSION
    max_window: int = DEFAULT_CONFIG.max_window
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weights.shape != (len(self.vocab) + 1, N_TAGS):
            raise TaggerError(f"weight matrix shape {self.weights.shape} does not match vocabulary")
        if self.transitions.shape != (N_TAGS, N_TAGS):
            raise TaggerError("transition matrix must be 27x27")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.transitions).all()):
            raise TaggerError("non-finite weights")

    def feature_weights(self, feature: str) -> np.ndarray:
        return self.weights[self.vocab.get(feature, 0)]

    def feature_ids(self, doc: Document) -> np.ndarray:
        feats = token_features(doc)
        if not feats:
            return np.zeros((0, 1), dtype=np.int64)
        width = max(len(f) for f in feats)
        ids = np.zeros((len(feats), width), dtype=np.int64)
        for i, f in enumerate(feats):
            ids[i, : len(f)] = [self.vocab.get(x, 0) for x in f]
        return ids

    def emissions(self, ids: np.ndarray) -> np.ndarray:
        return self.weights[ids].sum(axis=1)

    def save(self, path: str | Path) -> None:
        header = {
            "format_version": MODEL_FORMAT_VERSION,
            "template_version": self.template_version,
            "max_window": self.max_window,
            "tags": list(TAGS),
            "meta": self.meta,
        }
        vocab = sorted(self.vocab.items(), key=lambda kv: kv[1])
        features = "\n".join(k for k, _ in vocab)
        # write a zip by hand so that timestamps are fixed and files are byte-identical
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            for name, payload in (
                ("header.json", json.dumps(header, sort_keys=True).encode()),
                ("features.txt", features.encode("utf-8")),
                ("weights.npy", _npy_bytes(self.weights)),
                ("transitions.npy", _npy_bytes(self.transitions)),
            ):
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, payload)

    @classmethod
    def load(cls, path: str | Path) -> "LinearTaggerModel":
        try:
            with zipfile.ZipFile(path) as zf:
                header = json.loads(zf.read("header.json"))
                features = zf.read("features.txt").decode("utf-8")
                weights = np.load(io.BytesIO(zf.read("weights.npy")), allow_pickle=False)
                transitions = np.load(io.BytesIO(zf.read("transitions.npy")), allow_pickle=False)
        except (zipfile.BadZipFile, KeyError, ValueError) as exc:
            raise TaggerError(f"{path}: not a tagger model ({exc})") from exc
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise TaggerError(f"{path}: unsupported model format {header.get('format_version')}")
        if header.get("template_version") != FEATURE_TEMPLATE_VERSION:
            raise TaggerError(f"{path}: feature template v{header.get('template_version')} is not supported")
        if tuple(header.get("tags", ())) != TAGS:
            raise TaggerError(f"{path}: tag inventory mismatch")
        names = features.split("\n") if features else []
        vocab = {name: i + 1 for i, name in enumerate(names)}
        return cls(vocab, weights, transitions, header["template_version"], header["max_window"], header.get("meta", {}))


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def _ensure_tokens(doc: Document, cfg: TokenizerConfig) -> Document:
    if doc.tokens or not doc.text.strip():
        return doc
    return prepare(doc, cfg)


def train_tagger(
    corpus: Sequence[tuple[Document, Iterable[Entity]]],
    epochs: int = 5,
    seed: int = 0,
    cfg: TokenizerConfig = DEFAULT_CONFIG,
    log=None,
) -> LinearTaggerModel:
    """Averaged structured perceptron over sentence-packed windows.

    ``log``, when given, is called as ``log(epoch, mistakes, snapshot)`` after
    each epoch, ``snapshot`` being a zero-argument callable returning the
    averaged model so far.
    """
    if not corpus:
        raise EmptyCorpus("training corpus is empty")
    if epochs < 0:
        raise TaggerError("epochs must be >= 0")

    vocab: dict[str, int] = {}
    examples: list[tuple[np.ndarray, np.ndarray]] = []
    for doc, gold in corpus:
        doc = _ensure_tokens(doc, cfg)
        feats = token_features(doc)
        tags = encode_bio(doc, gold)
        rows = []
        for f in feats:
            row = []
            for x in f:
                if x not in vocab:
                    vocab[x] = len(vocab) + 1
                row.append(vocab[x])
            rows.append(row)
        width = max((len(r) for r in rows), default=1)
        ids = np.zeros((len(rows), width), dtype=np.int64)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = r
        tag_arr = np.asarray(tags, dtype=np.int64)
        for w in segment_windows(doc, cfg):
            sl = slice(w.token_range.start, w.token_range.stop)
            examples.append((ids[sl], tag_arr[sl]))

    n_feats = len(vocab) + 1
    W = np.zeros((n_feats, N_TAGS))
    U = np.zeros_like(W)
    T = np.zeros((N_TAGS, N_TAGS))
    UT = np.zeros_like(T)
    c = 1.0

    def snapshot(done: int) -> LinearTaggerModel:
        return LinearTaggerModel(
            vocab=dict(vocab),
            weights=W - U / c if done else W.copy(),
            transitions=T - UT / c if done else T.copy(),
            max_window=cfg.max_window,
            meta={"epochs": done, "seed": seed, "examples": len(examples)},
        )

    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        mistakes = 0
        for k in rng.permutation(len(examples)):
            ids, gold = examples[k]
            pred = np.asarray(viterbi_decode(W[ids].sum(axis=1), T), dtype=np.int64)
            if not np.array_equal(pred, gold):
                mistakes += 1
                diff = np.nonzero(pred != gold)[0]
                for i in diff:
                    row = ids[i]
                    np.add.at(W, (row, gold[i]), 1.0)
                    np.add.at(W, (row, pred[i]), -1.0)
                    np.add.at(U, (row, gold[i]), c)
                    np.add.at(U, (row, pred[i]), -c)
                for seq, sign in ((gold, 1.0), (pred, -1.0)):
                    np.add.at(T, (seq[:-1], seq[1:]), sign)
                    np.add.at(UT, (seq[:-1], seq[1:]), sign * c)
                W[0] = 0.0
                U[0] = 0.0
            c += 1.0
        if log is not None:
            log(epoch, mistakes, lambda: snapshot(epoch + 1))

    return snapshot(epochs)


def predict(model: LinearTaggerModel, doc: Document, cfg: TokenizerConfig | None = None) -> list[Entity]:
    cfg = cfg or TokenizerConfig(max_window=model.max_window)
    doc = _ensure_tokens(doc, cfg)
    if not doc.tokens:
        return []
    ids = model.feature_ids(doc)
    em = model.emissions(ids)
    tags: list[int] = []
    for w in segment_windows(doc, cfg):
        tags.extend(viterbi_decode(em[w.token_range.start : w.token_range.stop], model.transitions))
    return decode_bio(tags, doc, source="model")


def load_external_predictions(
    path: str | Path,
    corpus: Mapping[str, Document] | Iterable[Document],
) -> dict[str, list[Entity]]:
    """Read a prediction file produced by any external model and validate it."""
    docs = corpus if isinstance(corpus, Mapping) else {d.doc_id: d for d in corpus}
    out: dict[str, list[Entity]] = {}
    for rec in read_prediction_records(path):
        doc_id = str(rec.get("doc_id"))
        if doc_id not in docs:
            raise UnknownDoc(f"prediction for unknown document {doc_id!r}")
        n = len(docs[doc_id].text)
        ents = out.setdefault(doc_id, [])
        for obj in rec.get("entities", ()):
            try:
                b, e = int(obj["begin"]), int(obj["end"])
                label = Label.parse(obj["label"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidSpan(f"{doc_id}: malformed entity {obj!r}") from exc
            if not 0 <= b < e <= n:
                raise InvalidSpan(f"{doc_id}: span [{b},{e}) outside text of length {n}")
            ents.append(Entity(Span(b, e), label, "model", score=obj.get("score")))
    for ents in out.values():
        ents.sort(key=Entity.sort_key)
    return out
