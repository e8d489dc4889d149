import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from approxtail.dataset import (
    NUMERIC,
    TEXT,
    Corpus,
    DataError,
    DuplicateError,
    RatingMatrix,
    Subset,
    load_corpus,
    load_ratings,
    parse_corpus,
    parse_ratings,
    partition,
    sorted_ids,
    vectorize,
    write_corpus,
    write_ratings,
)


def test_load_ratings_two_users(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1,10,4.0\n2,10,3.0\n")
    m = load_ratings(p)
    assert m.users == ["1", "2"]
    assert m.items == ["10"]
    assert m.ratings == {("1", "10"): 4.0, ("2", "10"): 3.0}


def test_load_ratings_empty(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("")
    m = load_ratings(p)
    assert len(m) == 0 and m.items == []


def test_load_ratings_duplicate(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1,10,4.0\n1,10,4.0\n")
    with pytest.raises(DuplicateError):
        load_ratings(p)


@pytest.mark.parametrize("line", ["1,10", "1,10,x", "1,10,6.0", "1,10,0.5", ",10,3"])
def test_bad_rating_lines(line):
    with pytest.raises(DataError):
        parse_ratings([line])


def test_corpus_counts_occurrences():
    c = parse_corpus(["d1\ta b a"])
    assert c.docs == {"d1": {"a": 2, "b": 1}}


def test_corpus_tokenization_lowercases():
    c = parse_corpus(["d1\tA a  B"])
    assert c.docs["d1"] == {"a": 2, "b": 1}


def test_corpus_vocabulary_union():
    c = parse_corpus(["d1\ta b", "d2\tc d"])
    assert c.vocabulary == ["a", "b", "c", "d"]


def test_corpus_empty_document(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("d1\t\n")
    with pytest.raises(DataError):
        load_corpus(p)


def test_corpus_duplicate_doc():
    with pytest.raises(DataError):
        parse_corpus(["d1\ta", "d1\tb"])


def test_partition_even():
    m = RatingMatrix({str(u): {"1": 3.0} for u in range(6)})
    assert [len(s) for s in partition(m, 3)] == [2, 2, 2]


def test_partition_remainder():
    c = Corpus({f"d{k}": {"a": 1} for k in range(7)})
    assert [len(s) for s in partition(c, 3)] == [3, 2, 2]


def test_partition_identity():
    m = RatingMatrix({"1": {"a": 2.0}, "2": {"b": 3.0}})
    (s,) = partition(m, 1)
    assert s.points == m.rows and s.kind == NUMERIC


def test_partition_rejects_too_many_components():
    with pytest.raises(ValueError):
        partition(Corpus({"d1": {"a": 1}}), 2)


def test_vectorize_text():
    s = Subset(TEXT, 0, {"d1": {"a": 2, "b": 1}, "d2": {"b": 3}})
    ds = vectorize(s)
    assert ds.cols == ("a", "b")
    assert ds.to_dense().tolist() == [[2.0, 1.0], [0.0, 3.0]]


def test_vectorize_numeric_keeps_sparsity():
    rows = {"1": {"10": 4.0, "11": 2.0}, "2": {"11": 5.0}}
    ds = vectorize(Subset(NUMERIC, 0, rows))
    assert ds.nnz == 3 and ds.shape == (2, 2)
    got = {(ds.rows[r], ds.cols[c]): v for r, c, v in zip(ds.row_idx, ds.col_idx, ds.values)}
    assert got == {("1", "10"): 4.0, ("1", "11"): 2.0, ("2", "11"): 5.0}


def test_vectorize_empty():
    ds = vectorize(Subset(NUMERIC, 0, {}))
    assert ds.shape == (0, 0)


def test_ids_sort_numerically():
    assert sorted_ids(["10", "9", "a", "100"]) == ["9", "10", "100", "a"]


def test_round_trip_files(tmp_path):
    m = RatingMatrix({"2": {"5": 1.5}, "1": {"5": 4.0, "7": 3.0}})
    write_ratings(m, tmp_path / "r.csv")
    assert load_ratings(tmp_path / "r.csv") == m
    c = Corpus({"d2": {"x": 1}, "d1": {"a": 2, "b": 1}})
    write_corpus(c, tmp_path / "c.tsv")
    assert load_corpus(tmp_path / "c.tsv").docs == c.docs


def test_loader_deterministic(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("3,1,2.0\n1,2,5.0\n2,1,1.0\n")
    assert load_ratings(p) == load_ratings(p)


doc_maps = st.dictionaries(
    st.text(alphabet="abcdefgh", min_size=1, max_size=3),
    st.integers(min_value=1, max_value=9),
    min_size=1,
    max_size=6,
)


@settings(max_examples=60, deadline=None)
@given(st.lists(doc_maps, min_size=1, max_size=25), st.integers(min_value=1, max_value=6))
def test_partition_is_bijection(docs, n):
    corpus = Corpus({f"d{k}": tf for k, tf in enumerate(docs)})
    n = min(n, len(corpus))
    parts = partition(corpus, n)
    ids = [pid for s in parts for pid in s.points]
    assert sorted(ids) == sorted(corpus.docs)
    sizes = [len(s) for s in parts]
    assert max(sizes) - min(sizes) <= 1


@settings(max_examples=60, deadline=None)
@given(st.lists(doc_maps, min_size=1, max_size=15))
def test_text_row_sums_equal_doc_length(docs):
    s = Subset(TEXT, 0, {f"d{k}": tf for k, tf in enumerate(docs)})
    ds = vectorize(s)
    dense = ds.to_dense()
    for r, pid in enumerate(ds.rows):
        assert dense[r].sum() == sum(s.points[pid].values())
    assert np.all(dense >= 0)
