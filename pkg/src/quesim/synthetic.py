"""Synthetic question-pair corpora with planted duplicate clusters.

Questions in the same cluster are paraphrases of one another (shared key
words in varying order with varying filler), so duplicate labels form an
equivalence relation.  Used for the smoke corpus and for tests.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .text_prep import QuestionPair, TEST_HEADER, tokenize, write_pairs

OPENERS = ("what is", "how do i", "why does", "which", "how can i", "where can i find",
           "is it true that", "what are", "should i", "when does")
STOP_FILLER = ("the", "a", "to", "of", "in", "for", "with", "and", "on", "best")
_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def _make_words(rng, n, taken):
    words = []
    while len(words) < n:
        k = rng.integers(2, 4)
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(k))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def make_corpus(n_pairs: int, seed: int = 0, n_clusters: int | None = None,
                positive_rate: float = 0.37, cluster_size=(2, 6)) -> list[QuestionPair]:
    rng = np.random.default_rng(seed)
    if n_clusters is None:
        n_clusters = max(3, n_pairs // 3)
    taken: set[str] = set()
    shared_topics = _make_words(rng, max(4, n_clusters // 4), taken)
    filler = _make_words(rng, 40, taken)
    clusters: list[list[tuple[int, str]]] = []
    qid = 0
    for _ in range(n_clusters):
        keys = _make_words(rng, 3, taken)
        # A topic word shared with other clusters creates lexical near-misses.
        topic = shared_topics[rng.integers(len(shared_topics))]
        size = int(rng.integers(cluster_size[0], cluster_size[1] + 1))
        texts: list[str] = []
        for _ in range(size * 10):
            if len(texts) == size:
                break
            picked = list(rng.permutation(keys)[: rng.integers(2, 4)])
            words = picked + [topic] + list(rng.choice(filler, size=rng.integers(0, 3), replace=False))
            words += list(rng.choice(STOP_FILLER, size=rng.integers(0, 3)))
            words = [str(w) for w in rng.permutation(words)]
            text = f"{OPENERS[rng.integers(len(OPENERS))]} {' '.join(words)}?"
            text = text[0].upper() + text[1:]
            if text not in texts:
                texts.append(text)
        clusters.append([])
        for text in texts:
            clusters[-1].append((qid, text))
            qid += 1
    multi = [c for c in clusters if len(c) >= 2]
    seen: set[tuple[int, int]] = set()
    pairs: list[QuestionPair] = []
    attempts = 0
    while len(pairs) < n_pairs and attempts < 100 * n_pairs:
        attempts += 1
        if rng.random() < positive_rate:
            c = multi[rng.integers(len(multi))]
            i, j = rng.choice(len(c), size=2, replace=False)
            (a, ta), (b, tb), label = c[i], c[j], 1
        else:
            ci, cj = rng.choice(len(clusters), size=2, replace=False)
            a, ta = clusters[ci][rng.integers(len(clusters[ci]))]
            b, tb = clusters[cj][rng.integers(len(clusters[cj]))]
            label = 0
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        pairs.append(QuestionPair(len(pairs), a, b, ta, tb, label))
    return pairs


def split_pairs(pairs: Sequence[QuestionPair], test_fraction: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pairs))
    n_test = int(round(len(pairs) * test_fraction))
    test = [pairs[i] for i in sorted(perm[:n_test])]
    train = [pairs[i] for i in sorted(perm[n_test:])]
    return train, test


def corpus_words(pairs: Iterable[QuestionPair]) -> list[str]:
    words: dict[str, None] = {}
    for p in pairs:
        for t in tokenize(p.q1_text) + tokenize(p.q2_text):
            words.setdefault(t, None)
    return list(words)


def write_glove(path, words: Sequence[str], dim: int, seed: int = 0, extra: int = 5) -> None:
    """Random vectors in GloVe text format, plus ``extra`` words not in the corpus."""
    rng = np.random.default_rng(seed)
    vocab = list(words) + [f"zz{i}" for i in range(extra)]
    with Path(path).open("w", encoding="utf-8") as fh:
        for w in vocab:
            vec = rng.normal(0.0, 0.5, size=dim)
            fh.write(w + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def write_test_csv(path, pairs: Sequence[QuestionPair]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TEST_HEADER)
        for k, p in enumerate(pairs):
            writer.writerow([k, p.q1_text, p.q2_text])


def write_labels_csv(path, pairs: Sequence[QuestionPair]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["test_id", "is_duplicate"])
        for k, p in enumerate(pairs):
            writer.writerow([k, p.label])


SMOKE_CONFIG = """\
# Smoke-test pipeline: 100 synthetic pairs, tiny model.
[paths]
train = train.csv
test = test.csv
glove = glove.txt
work_dir = work

[preprocess]
max_len = 12
embedding_dim = 8

[augment]
seed = 1

[model]
hidden = 4
head = 8
keep_prob = 0.8
join = full

[train]
seed = 2
epochs = 5
batch_size = 32
lr = 0.01

[secondary]
kind = rf
seed = 3
n_trees = 20
max_depth = 4
"""


def write_smoke_corpus(directory, seed: int = 0, n_pairs: int = 100, dim: int = 8) -> Path:
    """Write train/test CSVs, held-out labels, GloVe vectors and a config."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pairs = make_corpus(n_pairs, seed=seed)
    train, test = split_pairs(pairs, 0.2, seed=seed)
    write_pairs(d / "train.csv", train)
    write_test_csv(d / "test.csv", test)
    write_labels_csv(d / "test_labels.csv", test)
    write_glove(d / "glove.txt", corpus_words(pairs), dim, seed=seed)
    (d / "config.ini").write_text(SMOKE_CONFIG, encoding="utf-8")
    return d / "config.ini"
