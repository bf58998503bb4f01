"""Question text to fixed-length id sequences, plus corpus I/O and statistics."""

from __future__ import annotations

import csv
import string
import unicodedata
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

PAD, UNK = "PAD", "UNK"
PAD_ID, UNK_ID = 0, 1
DEFAULT_MAX_LEN = 40

TRAIN_HEADER = ["id", "qid1", "qid2", "question1", "question2", "is_duplicate"]
TEST_HEADER = ["test_id", "question1", "question2"]

_PUNCT = frozenset(string.punctuation)


@dataclass(frozen=True)
class QuestionPair:
    id: int
    qid1: int | None
    qid2: int | None
    q1_text: str
    q2_text: str
    label: int | None = None

    def __post_init__(self):
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"row {self.id}: label must be 0 or 1, got {self.label!r}")
        for q in (self.qid1, self.qid2):
            if q is not None and q < 0:
                raise DataError(f"row {self.id}: negative qid {q}")

    def flipped(self) -> "QuestionPair":
        return QuestionPair(self.id, self.qid2, self.qid1, self.q2_text, self.q1_text, self.label)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, then peel leading/trailing ASCII
    punctuation off each chunk as one-character tokens.

    Internal punctuation is left alone, so "don't" and "e-mail" survive
    as single tokens.

    >>> tokenize("What is REST?")
    ['what', 'is', 'rest', '?']
    """
    tokens = []
    for chunk in text.lower().split():
        start, end = 0, len(chunk)
        while start < end and chunk[start] in _PUNCT:
            start += 1
        while end > start and chunk[end - 1] in _PUNCT:
            end -= 1
        tokens.extend(chunk[:start])
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


def tokenize_many(texts: Sequence[str], jobs: int = 1) -> list[list[str]]:
    """Tokenize a batch of texts, optionally across worker processes.

    Output order always matches input order, so the result does not
    depend on ``jobs``.
    """
    if jobs <= 1 or len(texts) < 1000:
        return [tokenize(t) for t in texts]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(tokenize, texts, chunksize=max(1, len(texts) // (4 * jobs))))


def encode(tokens: Sequence[str], word_to_id: Mapping[str, int], max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    """Map tokens to ids, pre-padding with PAD or keeping the first ``max_len``."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    head = tokens[:max_len]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    if head:
        ids[max_len - len(head):] = [word_to_id.get(t, UNK_ID) for t in head]
    return ids


def decode(ids: Iterable[int], id_to_word: Sequence[str]) -> list[str]:
    """Inverse of encode for the non-PAD positions."""
    return [id_to_word[i] for i in ids if i != PAD_ID]


def encode_texts(texts: Sequence[str], word_to_id: Mapping[str, int], max_len: int) -> np.ndarray:
    out = np.empty((len(texts), max_len), dtype=np.int64)
    for i, text in enumerate(texts):
        out[i] = encode(tokenize(text), word_to_id, max_len)
    return out


def length_histogram(corpus: Iterable[Sequence[str]]) -> dict[int, int]:
    counts = Counter(len(seq) for seq in corpus)
    return dict(sorted(counts.items()))


def merge_histograms(parts: Iterable[Mapping[int, int]]) -> dict[int, int]:
    total: Counter = Counter()
    for part in parts:
        total.update(part)
    return dict(sorted(total.items()))


def format_histogram(hist: Mapping[int, int]) -> str:
    lines = ["length\tcount"]
    lines += [f"{length}\t{count}" for length, count in sorted(hist.items())]
    return "\n".join(lines)


def is_clean_token(token: str) -> bool:
    """Token invariant: nonempty, no whitespace, stable under lowercasing."""
    return bool(token) and not any(c.isspace() for c in token) and token.lower() == token


# -- corpus files -----------------------------------------------------------

def _int_field(row, key, lineno):
    value = row.get(key)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise DataError(f"line {lineno}: field {key!r} is not an integer: {value!r}") from None


def read_pairs(path) -> list[QuestionPair]:
    """Read a training or test CSV.

    Training rows carry ``id,qid1,qid2,question1,question2,is_duplicate``;
    test rows carry ``test_id,question1,question2`` and get ``qid=None``.
    Missing question text becomes the empty string.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "question1" not in fields or "question2" not in fields:
            raise DataError(f"{path}: missing question1/question2 columns (header {fields})")
        id_key = "id" if "id" in fields else "test_id" if "test_id" in fields else None
        if id_key is None:
            raise DataError(f"{path}: no id or test_id column")
        pairs = []
        for n, row in enumerate(reader):
            lineno = reader.line_num
            if None in row:
                raise DataError(f"{path}: line {lineno} has too many fields")
            row_id = _int_field(row, id_key, lineno)
            pairs.append(QuestionPair(
                id=n if row_id is None else row_id,
                qid1=_int_field(row, "qid1", lineno),
                qid2=_int_field(row, "qid2", lineno),
                q1_text=row["question1"] or "",
                q2_text=row["question2"] or "",
                label=_int_field(row, "is_duplicate", lineno),
            ))
    return pairs


def write_pairs(path, pairs: Sequence[QuestionPair], provenance: Sequence[str] | None = None) -> None:
    header = list(TRAIN_HEADER)
    if provenance is not None:
        if len(provenance) != len(pairs):
            raise DataError("provenance length does not match pairs")
        header.append("provenance")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, p in enumerate(pairs):
            row = [p.id, p.qid1, p.qid2, p.q1_text, p.q2_text, "" if p.label is None else p.label]
            if provenance is not None:
                row.append(provenance[i])
            writer.writerow(row)


def normalize_text(text: str) -> str:
    """Canonical form used to identify the same question across files."""
    return " ".join(tokenize(unicodedata.normalize("NFC", text)))


def write_token_file(path, token_lists: Iterable[Sequence[str]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for toks in token_lists:
            fh.write(" ".join(toks) + "\n")


def read_token_file(path) -> list[list[str]]:
    with Path(path).open(encoding="utf-8") as fh:
        return [line.split() for line in fh]


def write_id_cache(path, ids: np.ndarray) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in ids:
            fh.write(" ".join(str(int(i)) for i in row) + "\n")


def read_id_cache(path) -> np.ndarray:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                rows.append([int(tok) for tok in line.split()])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer id") from None
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: rows have differing lengths")
    return np.asarray(rows, dtype=np.int64)
