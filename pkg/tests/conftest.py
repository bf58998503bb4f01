import shutil
from pathlib import Path

import numpy as np
import pytest

from quesim.embeddings import EmbeddingStore, Vocabulary
from quesim.gru import ModelConfig, SiameseModel

SMOKE_DIR = Path(__file__).resolve().parents[1] / "data" / "smoke"


def random_store(n_words=6, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.from_words([f"w{i}" for i in range(n_words)])
    matrix = rng.normal(size=(vocab.n_w, dim))
    matrix[0] = 0.0
    return EmbeddingStore(vocab, matrix)


def store_for_words(words, dim, seed=0):
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.from_words(words)
    matrix = np.zeros((vocab.n_w, dim))
    matrix[2:] = rng.normal(0.0, 0.5, size=(vocab.n_w - 2, dim))
    matrix[1] = matrix[2:].mean(axis=0)
    return EmbeddingStore(vocab, matrix)


@pytest.fixture
def tiny_store():
    return random_store()


@pytest.fixture
def tiny_model(tiny_store):
    cfg = ModelConfig(hidden=[3, 2], head=[5], keep_prob=0.8, max_len=5)
    return SiameseModel.initialize(cfg, tiny_store, seed=1)


@pytest.fixture
def smoke_dir(tmp_path):
    """Private copy of the shipped smoke corpus (without any old work dir)."""
    dest = tmp_path / "smoke"
    shutil.copytree(SMOKE_DIR, dest, ignore=shutil.ignore_patterns("work"))
    return dest
