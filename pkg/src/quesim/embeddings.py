"""Pre-trained word vectors: GloVe ingestion, vocabulary, lookup."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import container
from .errors import DataError
from .text_prep import PAD, PAD_ID, UNK, UNK_ID


@dataclass
class Vocabulary:
    id_to_word: list[str]
    word_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.id_to_word[:2] != [PAD, UNK]:
            raise DataError("vocabulary must start with PAD, UNK")
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise DataError("vocabulary contains duplicate words")

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        return cls([PAD, UNK, *words])

    @property
    def n_w(self) -> int:
        return len(self.id_to_word)

    def __len__(self):
        return len(self.id_to_word)

    def __contains__(self, word):
        return word in self.word_to_id


class EmbeddingStore:
    """Vocabulary plus the ``n_w x d_w`` embedding matrix.

    Row 0 (PAD) is all zeros and is never trained; row 1 (UNK) starts at
    the mean of the loaded vectors.
    """

    def __init__(self, vocab: Vocabulary, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != vocab.n_w:
            raise DataError(f"matrix shape {matrix.shape} does not match vocabulary size {vocab.n_w}")
        if not np.all(np.isfinite(matrix)):
            raise DataError("embedding matrix contains non-finite values")
        if np.any(matrix[PAD_ID] != 0):
            raise DataError("PAD row must be all zeros")
        self.vocab = vocab
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_w(self) -> int:
        return self.vocab.n_w

    def trainable_mask(self) -> np.ndarray:
        mask = np.ones(self.n_w, dtype=bool)
        mask[PAD_ID] = False
        return mask

    def lookup(self, ids) -> np.ndarray:
        return lookup(self.matrix, ids)

    def save(self, path) -> None:
        container.save(path, "store", {"vocab": self.vocab.id_to_word}, {"embedding": self.matrix})

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        _, meta, tensors = container.load(path, expect_kind="store")
        return cls(Vocabulary(list(meta["vocab"])), tensors["embedding"])


def lookup(matrix: np.ndarray, ids) -> np.ndarray:
    """Rows of ``matrix`` for each id; works for any id array shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= matrix.shape[0]):
        raise IndexError(f"token id out of range [0, {matrix.shape[0]}); corrupted cache?")
    return matrix[ids]


def load_glove(path, expected_dim: int, corpus_vocab: Iterable[str]) -> EmbeddingStore:
    """Read a GloVe text file, keeping only words that occur in the corpus.

    Vocabulary order is the order in which words appear in the file.
    Corpus words missing from the file are left out (they encode to UNK).
    """
    wanted = set(corpus_vocab)
    words, rows = [], []
    seen = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) < 2:
                raise DataError(f"{path}: line {lineno}: expected a token followed by floats")
            word = parts[0]
            if len(parts) - 1 != expected_dim:
                raise DataError(
                    f"{path}: line {lineno}: token {word!r} has {len(parts) - 1} values, expected {expected_dim}"
                )
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError:
                raise DataError(f"{path}: line {lineno}: unparsable float") from None
            if word in wanted and word not in seen and word not in (PAD, UNK):
                seen.add(word)
                words.append(word)
                rows.append(vec)
    vocab = Vocabulary.from_words(words)
    matrix = np.zeros((vocab.n_w, expected_dim), dtype=np.float64)
    if rows:
        loaded = np.asarray(rows, dtype=np.float64)
        if not np.all(np.isfinite(loaded)):
            raise DataError(f"{path}: non-finite values in vectors")
        matrix[2:] = loaded
        matrix[UNK_ID] = loaded.mean(axis=0)
    return EmbeddingStore(vocab, matrix)
