import numpy as np
import pytest
from hypothesis import given, strategies as st

from quesim.errors import ConfigError, DataError
from quesim.text_prep import (
    PAD_ID, UNK, UNK_ID, QuestionPair, decode, encode, format_histogram, is_clean_token,
    length_histogram, merge_histograms, read_id_cache, read_pairs, tokenize, tokenize_many,
    write_id_cache, write_pairs,
)


@pytest.mark.parametrize("text, expected", [
    ("What is REST?", ["what", "is", "rest", "?"]),
    ("", []),
    ("Hello", ["hello"]),
    ("Don't use e-mail!!", ["don't", "use", "e-mail", "!", "!"]),
    ("(quoted) 'word'", ["(", "quoted", ")", "'", "word", "'"]),
    ("  tabs\tand\nnewlines ", ["tabs", "and", "newlines"]),
    ("...", [".", ".", "."]),
    ("3.5 a/b", ["3.5", "a/b"]),
])
def test_tokenize_examples(text, expected):
    assert tokenize(text) == expected


@given(st.text())
def test_tokenize_tokens_are_clean(text):
    assert all(is_clean_token(t) for t in tokenize(text))


@given(st.text())
def test_tokenize_idempotent(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks


@given(st.text())
def test_tokenize_only_drops_whitespace(text):
    # Joining tokens without separators gives back the lowercased text minus whitespace.
    lowered = "".join(text.lower().split())
    assert "".join(tokenize(text)) == lowered


def test_tokenize_many_matches_serial():
    texts = [f"Question {i}: what is x{i}?" for i in range(1500)]
    assert tokenize_many(texts, jobs=2) == [tokenize(t) for t in texts]


VOCAB = {"a": 2, "b": 3}


def test_encode_prepads():
    assert encode(["a", "b"], VOCAB, 4).tolist() == [0, 0, 2, 3]


def test_encode_exact_fit():
    toks = [f"w{i}" for i in range(40)]
    vocab = {t: i + 2 for i, t in enumerate(toks)}
    assert encode(toks, vocab, 40).tolist() == list(range(2, 42))


def test_encode_unk():
    assert encode(["zzz-not-in-vocab"], VOCAB, 2).tolist() == [PAD_ID, UNK_ID]


def test_encode_truncates_keeping_head():
    assert encode(["a", "b", "a", "b"], VOCAB, 2).tolist() == [2, 3]


def test_encode_rejects_zero_length():
    with pytest.raises(ConfigError):
        encode(["a"], VOCAB, 0)


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=12), st.integers(1, 10))
def test_encode_properties(tokens, max_len):
    ids = encode(tokens, VOCAB, max_len)
    assert len(ids) == max_len
    n_pad = int((ids == PAD_ID).sum())
    assert n_pad == max(0, max_len - len(tokens))
    assert np.all(ids[:n_pad] == PAD_ID)
    assert np.all(ids[n_pad:] != PAD_ID)
    id_to_word = ["PAD", UNK, "a", "b"]
    expected = [t if t in VOCAB else UNK for t in tokens[:max_len]]
    assert decode(ids, id_to_word) == expected


def test_length_histogram():
    assert length_histogram([]) == {}
    assert length_histogram([["a"], ["a", "b"], ["c"]]) == {1: 2, 2: 1}


def test_histogram_merge_equals_whole():
    corpus = [["x"] * (i % 7) for i in range(50)]
    parts = [length_histogram(corpus[:20]), length_histogram(corpus[20:])]
    assert merge_histograms(parts) == length_histogram(corpus)
    assert sum(length_histogram(corpus).values()) == 50


def test_format_histogram_sorted():
    assert format_histogram({3: 1, 1: 2}).splitlines() == ["length\tcount", "1\t2", "3\t1"]


def test_question_pair_validation():
    with pytest.raises(DataError):
        QuestionPair(0, 1, 2, "a", "b", label=2)
    with pytest.raises(DataError):
        QuestionPair(0, -1, 2, "a", "b", label=1)
    assert QuestionPair(0, 1, 2, "", "", None).label is None


def test_csv_roundtrip_with_quoting(tmp_path):
    pairs = [
        QuestionPair(0, 1, 2, 'Has "quotes", commas', "multi\nline", 1),
        QuestionPair(1, 3, 4, "", "ünïcode?", 0),
    ]
    path = tmp_path / "p.csv"
    write_pairs(path, pairs)
    assert read_pairs(path) == pairs


def test_read_test_schema(tmp_path):
    path = tmp_path / "test.csv"
    path.write_text('test_id,question1,question2\n0,"a, b",c\n1,,d\n', encoding="utf-8")
    pairs = read_pairs(path)
    assert [(p.id, p.qid1, p.q1_text, p.q2_text, p.label) for p in pairs] == [
        (0, None, "a, b", "c", None), (1, None, "", "d", None)]


def test_read_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_pairs(path)


def test_id_cache_roundtrip(tmp_path):
    ids = np.array([[0, 0, 5], [1, 2, 3]])
    write_id_cache(tmp_path / "c.ids", ids)
    assert (tmp_path / "c.ids").read_text() == "0 0 5\n1 2 3\n"
    np.testing.assert_array_equal(read_id_cache(tmp_path / "c.ids"), ids)
