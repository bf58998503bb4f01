"""Training-set augmentation for the Siamese GRU.

Originals are kept, every pair is also added with its questions swapped,
each distinct question is paired with itself as a positive, and random
negatives are drawn until positives and negatives balance.  Augmented
rows feed only the GRU; the secondary classifier trains on originals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import DataError
from .features import DuplicateGraph
from .text_prep import QuestionPair

log = logging.getLogger(__name__)

ORIGINAL, FLIPPED, SELF, SAMPLED_NEGATIVE = "original", "flipped", "self", "sampled_negative"

# Beyond this many distinct questions the exhaustive fallback is skipped.
_EXHAUSTIVE_LIMIT = 3000


@dataclass
class AugmentedDataset:
    pairs: list[QuestionPair]
    provenance: list[str]
    seed: int
    shortfall: int = 0
    counts: dict = field(default_factory=dict)

    @property
    def n_positive(self) -> int:
        return sum(1 for p in self.pairs if p.label == 1)

    @property
    def n_negative(self) -> int:
        return sum(1 for p in self.pairs if p.label == 0)

    @property
    def ratio(self) -> float:
        neg = self.n_negative
        return self.n_positive / neg if neg else float("inf")


def flip_pairs(pairs: Sequence[QuestionPair]) -> list[QuestionPair]:
    return [p.flipped() for p in pairs]


def _questions(pairs):
    """qid -> text, first occurrence wins, in first-seen order."""
    out = {}
    for p in pairs:
        out.setdefault(p.qid1, p.q1_text)
        out.setdefault(p.qid2, p.q2_text)
    return out


def self_pairs(pairs: Sequence[QuestionPair]) -> list[QuestionPair]:
    return [QuestionPair(-1, q, q, text, text, 1) for q, text in _questions(pairs).items()]


@dataclass
class NegativeSample:
    pairs: list[QuestionPair]
    shortfall: int


def _valid_negative(a, b, graph, emitted):
    if a == b or graph.has_edge(a, b):
        return False
    key = (a, b) if a < b else (b, a)
    if key in emitted:
        return False
    return not (graph.neighbors(a) & graph.neighbors(b))


def sample_negatives(pairs: Sequence[QuestionPair], graph: DuplicateGraph, target: int, seed: int) -> NegativeSample:
    """Draw ``target`` label-0 pairs of questions with no known common duplicate.

    Uniform rejection sampling over question pairs, capped at 100 x target
    draws.  If that leaves a shortfall on a small corpus, the remaining
    valid candidates are enumerated, shuffled with the same generator, and
    used to fill it.  Whatever still cannot be filled is reported.
    """
    if target < 0:
        raise ValueError("target must be nonnegative")
    questions = _questions(pairs)
    qids = list(questions)
    rng = np.random.default_rng(seed)
    emitted: set[tuple[int, int]] = set()
    chosen: list[tuple[int, int]] = []
    n = len(qids)
    if n >= 2 and target:
        for _ in range(100 * target):
            if len(chosen) == target:
                break
            i, j = rng.integers(0, n, size=2)
            a, b = qids[i], qids[j]
            if _valid_negative(a, b, graph, emitted):
                emitted.add((a, b) if a < b else (b, a))
                chosen.append((a, b))
        if len(chosen) < target and n <= _EXHAUSTIVE_LIMIT:
            rest = [(a, b) for a, b in combinations(qids, 2) if _valid_negative(a, b, graph, emitted)]
            order = rng.permutation(len(rest))
            for k in order[: target - len(chosen)]:
                chosen.append(rest[k])
    shortfall = target - len(chosen)
    if shortfall:
        log.warning("negative sampling short by %d of %d", shortfall, target)
    out = [QuestionPair(-1, a, b, questions[a], questions[b], 0) for a, b in chosen]
    return NegativeSample(out, shortfall)


def predicted_counts(n_pos: int, n_neg: int, n_distinct: int) -> dict[str, int]:
    """Closed-form sizes of the augmented set, assuming no sampling shortfall."""
    positives = 2 * n_pos + n_distinct
    negatives_before = 2 * n_neg
    target = max(0, positives - negatives_before)
    return {
        "positives": positives,
        "negatives_before_sampling": negatives_before,
        "sampled_negatives": target,
        "negatives": negatives_before + target,
        "total": positives + negatives_before + target,
    }


def augment_all(pairs: Sequence[QuestionPair], seed: int) -> AugmentedDataset:
    if any(p.label is None for p in pairs):
        raise DataError("augmentation requires every pair to be labeled")
    if any(p.qid1 is None or p.qid2 is None for p in pairs):
        raise DataError("augmentation requires qid1/qid2 on every pair")
    graph = DuplicateGraph.from_pairs(pairs)
    originals = list(pairs)
    flips = flip_pairs(originals)
    selfs = self_pairs(originals)
    out = originals + flips + selfs
    prov = [ORIGINAL] * len(originals) + [FLIPPED] * len(flips) + [SELF] * len(selfs)
    n_pos = sum(p.label == 1 for p in out)
    n_neg = len(out) - n_pos
    target = max(0, n_pos - n_neg)
    sample = sample_negatives(originals, graph, target, seed)
    out += sample.pairs
    prov += [SAMPLED_NEGATIVE] * len(sample.pairs)

    # Rows created here get fresh ids after the largest original id.
    next_id = max((p.id for p in originals), default=-1) + 1
    final = []
    for p, tag in zip(out, prov):
        if tag != ORIGINAL:
            p = QuestionPair(next_id, p.qid1, p.qid2, p.q1_text, p.q2_text, p.label)
            next_id += 1
        final.append(p)
    counts = {
        "original": len(originals), "flipped": len(flips), "self": len(selfs),
        "sampled_negative": len(sample.pairs), "positives_before_balancing": n_pos,
    }
    return AugmentedDataset(final, prov, seed, sample.shortfall, counts)
