"""Hand-engineered pair features and the 4-column rows for secondary classifiers."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .text_prep import QuestionPair, normalize_text, tokenize


def load_stopwords(path=None) -> frozenset[str]:
    """Built-in list (57 words) unless a one-word-per-line file is given."""
    if path is None:
        text = resources.files("quesim").joinpath("stopwords.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip() and not w.startswith("#"))


STOPWORDS = load_stopwords()


class DuplicateGraph:
    """Undirected graph over question ids; an edge means a known duplicate."""

    def __init__(self):
        self.adjacency: dict[int, set[int]] = defaultdict(set)

    @classmethod
    def from_pairs(cls, pairs: Iterable[QuestionPair]) -> "DuplicateGraph":
        graph = cls()
        for p in pairs:
            if p.label == 1:
                graph.add_edge(p.qid1, p.qid2)
        return graph

    def add_edge(self, a: int, b: int) -> None:
        if a is None or b is None or a == b:
            return
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)

    def neighbors(self, qid) -> set[int]:
        return self.adjacency.get(qid, set())

    def has_edge(self, a, b) -> bool:
        return b in self.neighbors(a)

    def __len__(self):
        return len(self.adjacency)


def common_dup_count(qid1, qid2, graph: DuplicateGraph) -> int:
    shared = graph.neighbors(qid1) & graph.neighbors(qid2)
    shared.discard(qid1)
    shared.discard(qid2)
    return len(shared)


def _filtered(tokens, stopwords):
    return [t for t in tokens if t not in stopwords]


def word_match_share(t1: Sequence[str], t2: Sequence[str], stopwords=STOPWORDS) -> float:
    a, b = _filtered(t1, stopwords), _filtered(t2, stopwords)
    if not a and not b:
        return 0.0
    set_a, set_b = set(a), set(b)
    shared = sum(1 for w in a if w in set_b) + sum(1 for w in b if w in set_a)
    return shared / (len(a) + len(b))


@dataclass
class IdfTable:
    weight: dict[str, float]
    n_docs: int

    def __getitem__(self, word) -> float:
        return self.weight.get(word, 0.0)


def build_idf(corpus: Iterable[Sequence[str]]) -> IdfTable:
    """Inverse document frequency over distinct questions.

    ``weight(w) = max(0, ln(n_docs / (1 + df(w))))``; words absent from
    the table weigh 0.
    """
    docs = {tuple(toks) for toks in corpus}
    if not docs:
        raise DataError("cannot build IDF table from an empty corpus")
    df: Counter = Counter()
    for toks in docs:
        df.update(set(toks))
    n = len(docs)
    weight = {w: max(0.0, math.log(n / (1 + c))) for w, c in df.items()}
    return IdfTable(weight, n)


def tfidf_word_match(t1: Sequence[str], t2: Sequence[str], idf: IdfTable, stopwords=STOPWORDS) -> float:
    a, b = _filtered(t1, stopwords), _filtered(t2, stopwords)
    set_a, set_b = set(a), set(b)
    shared = sum(idf[w] for w in a if w in set_b) + sum(idf[w] for w in b if w in set_a)
    total = sum(idf[w] for w in a) + sum(idf[w] for w in b)
    if total == 0:
        return 0.0
    return shared / total


@dataclass
class FeatureRow:
    id: int
    gru_score: float
    word_match: float
    tfidf_match: float
    common_dups: int
    label: int | None = None

    def vector(self) -> list[float]:
        return [self.gru_score, self.word_match, self.tfidf_match, float(self.common_dups)]


FEATURE_NAMES = ("gru_score", "word_match", "tfidf_match", "common_dups")


class QuestionIndex:
    """Resolve question identity for rows that lack qids (test files).

    Questions seen in training keep their training qid, so test pairs can
    reach the duplicate graph; unseen text gets a fresh id with no edges.
    """

    def __init__(self, pairs: Iterable[QuestionPair]):
        self._by_text: dict[str, int] = {}
        top = -1
        for p in pairs:
            for qid, text in ((p.qid1, p.q1_text), (p.qid2, p.q2_text)):
                if qid is None:
                    continue
                self._by_text.setdefault(normalize_text(text), qid)
                top = max(top, qid)
        self._next = top + 1

    def resolve(self, text: str) -> int:
        key = normalize_text(text)
        qid = self._by_text.get(key)
        if qid is None:
            qid = self._by_text[key] = self._next
            self._next += 1
        return qid

    def with_qids(self, pair: QuestionPair) -> QuestionPair:
        if pair.qid1 is not None and pair.qid2 is not None:
            return pair
        return QuestionPair(pair.id, self.resolve(pair.q1_text), self.resolve(pair.q2_text),
                            pair.q1_text, pair.q2_text, pair.label)


class FeatureContext:
    """Everything derived from the training split that featurization needs."""

    def __init__(self, train_pairs: Sequence[QuestionPair], stopwords=STOPWORDS):
        self.graph = DuplicateGraph.from_pairs(train_pairs)
        self.index = QuestionIndex(train_pairs)
        questions = {}
        for p in train_pairs:
            questions.setdefault(p.qid1, p.q1_text)
            questions.setdefault(p.qid2, p.q2_text)
        self.idf = build_idf(tokenize(t) for t in questions.values())
        self.stopwords = stopwords


def hand_features(pair: QuestionPair, ctx: FeatureContext) -> tuple[float, float, int]:
    pair = ctx.index.with_qids(pair)
    t1, t2 = tokenize(pair.q1_text), tokenize(pair.q2_text)
    return (
        word_match_share(t1, t2, ctx.stopwords),
        tfidf_word_match(t1, t2, ctx.idf, ctx.stopwords),
        common_dup_count(pair.qid1, pair.qid2, ctx.graph),
    )


def featurize(pairs: Sequence[QuestionPair], model, ctx: FeatureContext, batch_size: int = 256) -> list[FeatureRow]:
    """One FeatureRow per pair, in input order; GRU scores use inference mode."""
    from .gru import predict_pairs

    scores = predict_pairs(model, [p.q1_text for p in pairs], [p.q2_text for p in pairs], batch_size)
    rows = []
    for p, score in zip(pairs, scores):
        wm, tm, cd = hand_features(p, ctx)
        rows.append(FeatureRow(p.id, float(score), wm, tm, cd, p.label))
    return rows


def rows_to_arrays(rows: Sequence[FeatureRow]) -> tuple[np.ndarray, np.ndarray | None]:
    X = np.array([r.vector() for r in rows], dtype=np.float64).reshape(len(rows), 4)
    labels = [r.label for r in rows]
    if any(l is None for l in labels):
        return X, None
    return X, np.array(labels, dtype=np.int64)


def write_features(path, rows: Sequence[FeatureRow]) -> None:
    labeled = bool(rows) and all(r.label is not None for r in rows)
    header = ["id", *FEATURE_NAMES] + (["label"] if labeled else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            line = [r.id, f"{r.gru_score:.17g}", f"{r.word_match:.17g}", f"{r.tfidf_match:.17g}", r.common_dups]
            if labeled:
                line.append(r.label)
            writer.writerow(line)


def read_features(path) -> list[FeatureRow]:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", *FEATURE_NAMES} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            try:
                label = rec.get("label")
                rows.append(FeatureRow(
                    int(rec["id"]), float(rec["gru_score"]), float(rec["word_match"]),
                    float(rec["tfidf_match"]), int(rec["common_dups"]),
                    int(label) if label not in (None, "") else None,
                ))
            except ValueError as exc:
                raise DataError(f"{path}: line {reader.line_num}: {exc}") from None
    return rows
