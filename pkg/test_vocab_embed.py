import numpy as np
import pytest

from errors import ConfigurationError, EmbeddingFormatError
from preprocess import TokenSequence
from vocab_embed import (OOV_ID, PAD_ID, Vocabulary, assemble_embedding, build_vocabulary, embed, encode,
                         load_embedding_file, pretrained_or_empty)


def seqs(*token_lists):
    return [TokenSequence(tuple(tokens)) for tokens in token_lists]


def test_vocabulary_order_and_cap():
    vocab = build_vocabulary(seqs(["b", "a", "c"], ["a", "c", "d"], ["a"]), max_size=3)
    assert vocab.id_to_token == ("<pad>", "<oov>", "a", "c", "b")
    assert vocab.lookup("d") == OOV_ID
    assert "a" in vocab and "d" not in vocab


def test_vocabulary_round_trip():
    vocab = build_vocabulary(seqs(["x", "y", "y"]), max_size=10)
    assert Vocabulary.from_dict(vocab.to_dict()) == vocab


def test_encode_pads_and_truncates():
    vocab = build_vocabulary(seqs(["a", "b"]), max_size=10)
    short = encode(TokenSequence(("a", "zzz")), vocab, T=4)
    assert short.ids.tolist() == [vocab.lookup("a"), OOV_ID, PAD_ID, PAD_ID]
    assert short.true_length == 2
    assert vocab.decode(short.ids) == ["a", "<oov>"]

    long = encode(TokenSequence(("a", "b", "a", "b", "a")), vocab, T=3)
    assert long.true_length == 3
    assert len(long.ids) == 3

    empty = encode(TokenSequence(()), vocab, T=3)
    assert empty.true_length == 0
    assert empty.ids.tolist() == [PAD_ID] * 3


def test_embedding_file_parsing(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("cat 0.1 0.2 0.3\n\ndog 1 2 3\ncat 9 9 9\n", encoding="utf-8")
    vectors = load_embedding_file(str(path), expected_d=3)
    assert set(vectors) == {"cat", "dog"}
    np.testing.assert_array_equal(vectors["cat"], [0.1, 0.2, 0.3])


@pytest.mark.parametrize("content, line", [
    ("cat 0.1 0.2\n", 1),
    ("cat 0.1 0.2 0.3\ndog 0.1 x 0.3\n", 2),
    ("cat 0.1 0.2 0.3\ndog 1 2 3\nbad 1 nan 3\n", 3),
])
def test_embedding_file_errors_name_the_line(tmp_path, content, line):
    path = tmp_path / "vectors.txt"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(EmbeddingFormatError) as excinfo:
        load_embedding_file(str(path), expected_d=3)
    assert excinfo.value.line == line


def test_assemble_embedding():
    vocab = build_vocabulary(seqs(["known", "unknown"]), max_size=10)
    pretrained = {"known": np.array([1.0, 2.0, 3.0, 4.0])}
    table = assemble_embedding(vocab, pretrained, d=4, seed=5)
    assert table.matrix.shape == (4, 4)
    np.testing.assert_array_equal(table.matrix[PAD_ID], np.zeros(4))
    np.testing.assert_array_equal(table.matrix[vocab.lookup("known")], [1.0, 2.0, 3.0, 4.0])
    others = table.matrix[[OOV_ID, vocab.lookup("unknown")]]
    assert np.all(np.abs(others) <= 0.05)
    assert not table.matrix.flags.writeable

    again = assemble_embedding(vocab, pretrained, d=4, seed=5)
    np.testing.assert_array_equal(table.matrix, again.matrix)


def test_assemble_embedding_dimension_mismatch():
    vocab = build_vocabulary(seqs(["a"]), max_size=10)
    with pytest.raises(ConfigurationError):
        assemble_embedding(vocab, {"a": np.ones(3)}, d=4)


def test_embed_looks_up_rows():
    vocab = build_vocabulary(seqs(["a", "b"]), max_size=10)
    table = assemble_embedding(vocab, {}, d=2, seed=1)
    seq = encode(TokenSequence(("b", "a")), vocab, T=3)
    X = embed(seq, table)
    assert X.shape == (3, 2)
    np.testing.assert_array_equal(X[0], table.matrix[vocab.lookup("b")])
    np.testing.assert_array_equal(X[2], np.zeros(2))


def test_no_embedding_file():
    assert pretrained_or_empty(None, 8) == {}


def test_embedding_file_with_bad_bytes(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_bytes(b"cat 0.1 0.2 0.3\n\xff\xfe 1 2 3\n")
    with pytest.raises(EmbeddingFormatError) as excinfo:
        load_embedding_file(str(path), expected_d=3)
    assert excinfo.value.line == 2
