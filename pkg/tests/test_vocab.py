import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vihsd.corpus import DataError
from vihsd.vocab import (
    PAD_ID,
    UNK_ID,
    UNK_TOKEN,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    encode_batch,
    load_embeddings,
    random_embeddings,
    toy_embeddings_path,
)

tokens = st.text(alphabet="abcxyzđơ", min_size=1, max_size=3)
corpora = st.lists(st.lists(tokens, max_size=8), max_size=10)


class TestBuildVocab:
    def test_ranking(self):
        vocab = build_vocab([["a", "b", "a"]])
        assert vocab.id_to_token == ["<pad>", "<unk>", "a", "b"]
        assert vocab.token_to_id == {"a": 2, "b": 3}

    def test_min_freq(self):
        assert "b" not in build_vocab([["a", "b", "a"]], min_freq=2)

    def test_tie_break(self):
        vocab = build_vocab([["y", "x"] * 3])
        assert vocab.token_to_id["x"] < vocab.token_to_id["y"]

    def test_empty_corpus(self):
        assert len(build_vocab([])) == 2

    def test_max_size(self):
        vocab = build_vocab([["a", "a", "a", "b", "b", "c"]], max_size=2)
        assert vocab.corpus_tokens() == ["a", "b"]

    def test_marker_spelled_token_does_not_collide(self):
        vocab = build_vocab([["<pad>", "<unk>"]])
        assert vocab.token_to_id == {"<pad>": 2, "<unk>": 3}

    def test_bad_min_freq(self):
        with pytest.raises(ValueError):
            build_vocab([["a"]], min_freq=0)

    @given(corpora, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, corpus, rnd):
        shuffled = list(corpus)
        rnd.shuffle(shuffled)
        assert build_vocab(corpus) == build_vocab(shuffled)

    @given(corpora, st.integers(1, 3))
    def test_bijection_and_contiguity(self, corpus, min_freq):
        vocab = build_vocab(corpus, min_freq)
        assert sorted(vocab.token_to_id.values()) == list(range(2, len(vocab)))
        for tok, idx in vocab.token_to_id.items():
            assert vocab.id_to_token[idx] == tok

    def test_save_load(self, tmp_path):
        vocab = build_vocab([["đồ", "ngu", "đồ"]])
        vocab.save(tmp_path / "v.txt")
        assert Vocabulary.load(tmp_path / "v.txt") == vocab


class TestEncode:
    vocab = Vocabulary(["a"])

    def test_unknown_and_padding(self):
        seq = encode(["a", "z"], self.vocab, 4)
        assert seq.ids.tolist() == [2, 1, 0, 0] and seq.true_length == 2

    def test_empty(self):
        seq = encode([], self.vocab, 4)
        assert seq.ids.tolist() == [0, 0, 0, 0] and seq.true_length == 0

    def test_tail_truncation(self):
        vocab = Vocabulary(list("abcdef"))
        seq = encode(list("abcdef"), vocab, 4)
        assert seq.ids.tolist() == [2, 3, 4, 5] and seq.true_length == 4

    def test_bad_max_len(self):
        with pytest.raises(ValueError):
            encode(["a"], self.vocab, 0)

    @given(st.lists(tokens, max_size=12), st.integers(1, 12))
    def test_decode_restores_in_vocab_tokens(self, text, max_len):
        vocab = Vocabulary(["a", "b", "x"])
        seq = encode(text, vocab, max_len)
        assert np.all(seq.ids[seq.true_length:] == PAD_ID)
        assert np.all(seq.ids < len(vocab))
        expected = [t if t in vocab else UNK_TOKEN for t in text[:max_len]]
        assert decode(seq, vocab) == expected

    def test_batch(self):
        ids, lengths = encode_batch([["a"], [], ["a", "a", "a"]], self.vocab, 2)
        assert ids.tolist() == [[2, 0], [0, 0], [2, 2]]
        assert lengths.tolist() == [1, 0, 2]


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestEmbeddings:
    def test_verbatim_copy(self, tmp_path):
        path = write(tmp_path / "e.txt", "a 0.1 0.2\n")
        emb = load_embeddings(path, Vocabulary(["a"]))
        assert emb.matrix[2].tolist() == [0.1, 0.2]
        assert emb.dim == 2 and emb.coverage == 1.0

    def test_absent_rows_are_seeded_uniform(self, tmp_path):
        path = write(tmp_path / "e.txt", "2 3\na 1 2 3\nq 4 5 6\n")
        vocab = Vocabulary(["a", "b", "c", "d"])
        one = load_embeddings(path, vocab, seed=5)
        two = load_embeddings(path, vocab, seed=5)
        assert np.array_equal(one.matrix, two.matrix)
        rest = one.matrix[[UNK_ID, 3, 4, 5]]
        assert np.all(np.abs(rest) <= 0.25)
        assert not np.array_equal(rest, load_embeddings(path, vocab, seed=6).matrix[[UNK_ID, 3, 4, 5]])
        assert np.all(one.matrix[PAD_ID] == 0)

    def test_coverage_ratio(self, tmp_path):
        path = write(tmp_path / "e.txt", "a 1\nc 2\nzz 3\n")
        assert load_embeddings(path, Vocabulary(list("abcd"))).coverage == 0.5

    def test_header_dim_mismatch(self, tmp_path):
        path = write(tmp_path / "e.txt", "1 3\na 1 2 3\n")
        with pytest.raises(DataError):
            load_embeddings(path, Vocabulary(["a"]), expected_dim=2)

    def test_row_dim_mismatch_names_line(self, tmp_path):
        path = write(tmp_path / "e.txt", "a 1 2\nb 1 2 3\n")
        with pytest.raises(DataError, match="line 2"):
            load_embeddings(path, Vocabulary(["a", "b"]))

    def test_non_numeric_names_line(self, tmp_path):
        path = write(tmp_path / "e.txt", "a 1 2\nb 1 x\n")
        with pytest.raises(DataError, match="line 2"):
            load_embeddings(path, Vocabulary(["a", "b"]))

    def test_toy_file(self):
        vocab = build_vocab([["không", "tốt", "lạ"]])
        emb = load_embeddings(toy_embeddings_path(), vocab, expected_dim=4)
        assert emb.matrix.shape == (5, 4)
        assert emb.coverage == pytest.approx(2 / 3)
        assert np.all(np.isfinite(emb.matrix))

    @settings(max_examples=25)
    @given(st.integers(1, 64), st.integers(0, 100))
    def test_pad_row_is_zero(self, dim, seed):
        emb = random_embeddings(Vocabulary(["a", "b"]), dim, seed)
        assert emb.matrix[PAD_ID].tolist() == [0.0] * dim
