import pytest

from corpus import Document, compute_stats, load_corpus, plan_folds, stratified_holdout
from errors import ConfigurationError, CorpusFormatError, EmptyCorpusError, InfeasibleStratificationError, RowError


def test_load_sample_fixture(sample_corpus_path):
    docs = load_corpus(sample_corpus_path)
    assert [d.id for d in docs] == [0, 1]
    assert [d.label for d in docs] == [1, 0]
    assert "Verify" in docs[0].text


def test_load_accepts_float_labels(write_corpus):
    path = write_corpus([("a", "1.0"), ("b", "0.0"), ("c", "1")])
    assert [d.label for d in load_corpus(path)] == [1, 0, 1]


def test_bad_label_names_the_row(write_corpus):
    path = write_corpus([("a", "1"), ("b", "0"), ("c", "maybe")])
    with pytest.raises(RowError) as excinfo:
        load_corpus(path)
    assert excinfo.value.row == 3
    assert "row 3" in str(excinfo.value)


def test_missing_column(write_corpus):
    path = write_corpus([("a", "1")], label_column="label")
    with pytest.raises(ConfigurationError, match="isPhish"):
        load_corpus(path)


def test_header_only_and_empty_file(tmp_path):
    header_only = tmp_path / "header.csv"
    header_only.write_text("htmlContent,isPhish\n", encoding="utf-8")
    with pytest.raises(EmptyCorpusError):
        load_corpus(str(header_only))

    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(EmptyCorpusError):
        load_corpus(str(empty))


def test_quoted_text_keeps_commas_and_newlines(write_corpus):
    path = write_corpus([('<p class="x">a, b\nc</p>', "1")])
    (doc,) = load_corpus(path)
    assert doc.text == '<p class="x">a, b\nc</p>'


def test_stats_histogram():
    docs = [Document(0, "x" * 10, 1), Document(1, "x" * 1500, 0), Document(2, "x" * 999, 0)]
    stats = compute_stats(docs, bucket_width=1000)
    assert stats.total == 3
    assert stats.per_class == {0: 2, 1: 1}
    assert stats.length_histogram == [(0, 2), (1000, 1)]
    assert stats.to_dict()["per_class"] == {"0": 2, "1": 1}


def test_stats_on_sample(sample_corpus_path):
    stats = compute_stats(load_corpus(sample_corpus_path))
    assert stats.total == 2
    assert sum(count for _, count in stats.length_histogram) == 2


def test_folds_partition_and_balance(balanced_docs):
    docs = balanced_docs(50)
    plan = plan_folds(docs, k=5, seed=7)
    seen = []
    for f in range(5):
        test = plan.test_ids(f)
        train = plan.train_ids(f)
        assert len(test) == 20
        assert len(train) == 80
        assert not set(test) & set(train)
        labels = [docs[i].label for i in test]
        assert labels.count(1) == 10
        seen.extend(test)
    assert sorted(seen) == [d.id for d in docs]


def test_folds_uneven_classes_stay_within_one():
    docs = [Document(i, "t", 1 if i < 13 else 0) for i in range(40)]
    plan = plan_folds(docs, k=4, seed=3)
    sizes = [len(plan.test_ids(f)) for f in range(4)]
    assert max(sizes) - min(sizes) <= 1
    for f in range(4):
        positives = sum(docs[i].label for i in plan.test_ids(f))
        assert positives in (3, 4)


def test_folds_are_seeded(balanced_docs):
    docs = balanced_docs(30)
    assert plan_folds(docs, 5, 11) == plan_folds(docs, 5, 11)
    assert plan_folds(docs, 5, 11).folds != plan_folds(docs, 5, 12).folds


def test_fold_plan_ignores_input_order(balanced_docs):
    docs = balanced_docs(20)
    forward = plan_folds(docs, 4, 5)
    backward = plan_folds(list(reversed(docs)), 4, 5)
    assert all(forward.fold_of(d.id) == backward.fold_of(d.id) for d in docs)


def test_infeasible_stratification():
    docs = [Document(i, "t", 1 if i < 3 else 0) for i in range(20)]
    with pytest.raises(InfeasibleStratificationError):
        plan_folds(docs, k=5, seed=1)


def test_k_below_two(balanced_docs):
    with pytest.raises(ConfigurationError):
        plan_folds(balanced_docs(5), k=1, seed=1)


def test_holdout_is_stratified(balanced_docs):
    docs = balanced_docs(40)
    kept, holdout = stratified_holdout(docs, 0.1, seed=9)
    assert len(holdout) == 8
    assert sum(d.label for d in holdout) == 4
    assert {d.id for d in kept} | {d.id for d in holdout} == {d.id for d in docs}
    assert not {d.id for d in kept} & {d.id for d in holdout}


def test_holdout_zero_fraction(balanced_docs):
    docs = balanced_docs(5)
    kept, holdout = stratified_holdout(docs, 0.0, seed=9)
    assert kept == docs
    assert holdout == []


def test_invalid_utf8_names_the_line(tmp_path):
    path = tmp_path / "corpus.csv"
    path.write_bytes(b"htmlContent,isPhish\n<p>ok</p>,1\n<p>caf\xe9</p>,0\n")
    with pytest.raises(CorpusFormatError) as excinfo:
        load_corpus(str(path))
    assert excinfo.value.line == 3


def test_ragged_rows_are_a_format_error(tmp_path):
    path = tmp_path / "corpus.csv"
    path.write_text("htmlContent,isPhish\n<p>a</p>,1\n<p>b</p>,0,x,y\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError) as excinfo:
        load_corpus(str(path))
    assert excinfo.value.line == 3
    assert "line 3" in str(excinfo.value)
