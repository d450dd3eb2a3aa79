import math

import numpy as np
import pytest
import torch

from ccdd.data import (
    CharTokenizer,
    SyntheticSource,
    batch_for_step,
    load_corpus,
    pack_windows,
)
from ccdd.errors import ConfigError, InputError


class TestTokenizers:
    def test_byte_ids_match_hex_dump(self, tmp_path):
        payload = bytes([0, 65, 255, 10])
        path = tmp_path / "c.bin"
        path.write_bytes(payload * 8)
        windows, tok = load_corpus(str(path), "byte", 4, seed=0)
        assert tok.vocab_size == 256
        # windows fall on 4-byte boundaries, so each one is the raw byte dump
        for row in windows:
            assert bytes(row.tolist()) == payload

    def test_char_alphabet_sorted_and_persisted(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("cabab\ncc")
        windows, tok = load_corpus(str(path), "char", 2, seed=0)
        assert tok.alphabet == ["\n", "a", "b", "c"]
        vocab = tmp_path / "vocab.txt"
        tok.save_vocab(str(vocab))
        again = CharTokenizer.load_vocab(str(vocab))
        assert again.alphabet == tok.alphabet
        assert again.decode(tok.encode("cab")) == "cab"

    def test_char_round_trip_with_escapes(self, tmp_path):
        tok = CharTokenizer(["\n", "\t", "\\", "x"])
        path = tmp_path / "vocab.txt"
        tok.save_vocab(str(path))
        assert CharTokenizer.load_vocab(str(path)).alphabet == tok.alphabet

    def test_undecodable_bytes_rejected_in_char_mode(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_bytes(b"\xff\xfe\x00abc")
        with pytest.raises(InputError):
            load_corpus(str(path), "char", 2)

    def test_unknown_char_rejected(self):
        tok = CharTokenizer(["a", "b"])
        with pytest.raises(InputError):
            tok.encode("abc")


class TestCorpusPacking:
    def test_repeated_pattern_windows(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("ab" * 1000)
        windows, tok = load_corpus(str(path), "char", 8, seed=1)
        assert tok.vocab_size == 2
        # every window is the alternating pattern starting at an even offset
        for row in windows[:16]:
            assert row.tolist() == [0, 1] * 4

    def test_remainder_dropped(self):
        ids = np.arange(10)
        windows = pack_windows(ids, 4, seed=0)
        assert windows.shape == (2, 4)

    def test_too_short_corpus(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("ab")
        with pytest.raises(InputError) as err:
            load_corpus(str(path), "char", 16)
        assert "shorter than one window" in str(err.value)

    def test_empty_corpus(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("")
        with pytest.raises(InputError):
            load_corpus(str(path), "char", 4)

    def test_shuffle_deterministic(self):
        ids = np.arange(64)
        a = pack_windows(ids, 8, seed=5)
        b = pack_windows(ids, 8, seed=5)
        c = pack_windows(ids, 8, seed=6)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)

    def test_batch_for_step_is_stateless(self):
        windows = torch.arange(80).view(10, 8)
        a = batch_for_step(windows, 4, seed=1, step=7)
        b = batch_for_step(windows, 4, seed=1, step=7)
        c = batch_for_step(windows, 4, seed=1, step=8)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)


class TestSyntheticSource:
    def test_iid_uniform_entropy(self):
        src = SyntheticSource("iid_uniform", vocab_size=8)
        assert src.entropy_rate() == pytest.approx(math.log(8))

    def test_periodic_entropy_zero(self):
        src = SyntheticSource("periodic", pattern=(0, 1, 2))
        assert src.entropy_rate() == 0.0
        out = src.generate(7)
        assert out.tolist() == [0, 1, 2, 0, 1, 2, 0]

    def test_bigram_rows_validated(self):
        with pytest.raises(ConfigError):
            SyntheticSource("bigram", matrix=np.array([[0.5, 0.4], [0.5, 0.5]]))

    def test_bigram_entropy_from_stationary(self):
        # symmetric two-state chain: stationary is uniform, entropy is the
        # row entropy
        p = 0.9
        matrix = np.array([[p, 1 - p], [1 - p, p]])
        src = SyntheticSource("bigram", matrix=matrix)
        row_entropy = -(p * math.log(p) + (1 - p) * math.log(1 - p))
        assert src.entropy_rate() == pytest.approx(row_entropy, abs=1e-12)
        assert src.stationary().tolist() == pytest.approx([0.5, 0.5], abs=1e-9)

    def test_bigram_empirical_frequencies(self):
        matrix = np.array([[0.8, 0.2], [0.3, 0.7]])
        src = SyntheticSource("bigram", matrix=matrix)
        stream = src.generate(200_000, seed=4)
        trans = np.zeros((2, 2))
        for a, b in zip(stream, stream[1:]):
            trans[a, b] += 1
        trans /= trans.sum(axis=1, keepdims=True)
        assert np.max(np.abs(trans - matrix)) < 0.01

    def test_to_text_letters(self):
        src = SyntheticSource("periodic", pattern=(0, 2))
        assert src.to_text(4) == "acac"

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            SyntheticSource("markov")
