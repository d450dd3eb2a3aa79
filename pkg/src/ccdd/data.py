"""Corpus ingestion, tokenization, and synthetic sources with known entropy.

Byte tokenization uses raw file bytes (V = 256). Char tokenization builds a
sorted alphabet from the observed text and persists it one token per line so
sampling runs can detokenize without the original corpus. Corpora are packed
into contiguous fixed-length windows with the remainder dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError, InputError

_ESCAPES = {"\n": "\\n", "\t": "\\t", "\r": "\\r", "\\": "\\\\"}
_UNESCAPES = {v: k for k, v in _ESCAPES.items()}


class ByteTokenizer:
    kind = "byte"
    vocab_size = 256

    def encode(self, data: bytes) -> np.ndarray:
        return np.frombuffer(data, dtype=np.uint8).astype(np.int64)

    def decode(self, ids) -> str:
        return bytes(int(i) for i in ids).decode("utf-8", errors="replace")


class CharTokenizer:
    kind = "char"

    def __init__(self, alphabet: list[str]):
        if len(set(alphabet)) != len(alphabet):
            raise InputError("alphabet contains duplicate symbols")
        self.alphabet = list(alphabet)
        self.index = {ch: i for i, ch in enumerate(alphabet)}

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    @classmethod
    def from_text(cls, text: str) -> "CharTokenizer":
        return cls(sorted(set(text)))

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.array([self.index[ch] for ch in text], dtype=np.int64)
        except KeyError as exc:
            raise InputError(f"character {exc} not in the vocabulary") from exc

    def decode(self, ids) -> str:
        return "".join(self.alphabet[int(i)] for i in ids)

    def save_vocab(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ch in self.alphabet:
                fh.write(_ESCAPES.get(ch, ch) + "\n")

    @classmethod
    def load_vocab(cls, path: str) -> "CharTokenizer":
        alphabet = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh.read().splitlines():
                alphabet.append(_UNESCAPES.get(line, line))
        return cls(alphabet)


def load_corpus(path: str, tokenizer_kind: str, seq_len: int, seed: int = 0):
    """Tokenize a text file and pack it into shuffled length-L windows.

    Returns (windows, tokenizer) where windows is an int64 tensor (N, L).
    """
    if tokenizer_kind not in ("byte", "char"):
        raise ConfigError(f"unknown tokenizer {tokenizer_kind!r}")
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read corpus {path}: {exc}") from exc
    if not blob:
        raise InputError(f"corpus {path} is empty")

    if tokenizer_kind == "byte":
        tokenizer = ByteTokenizer()
        ids = tokenizer.encode(blob)
    else:
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InputError(f"corpus {path} is not valid UTF-8: {exc}") from exc
        tokenizer = CharTokenizer.from_text(text)
        ids = tokenizer.encode(text)

    windows = pack_windows(ids, seq_len, seed)
    return windows, tokenizer


def pack_windows(ids: np.ndarray, seq_len: int, seed: int = 0) -> torch.Tensor:
    n = ids.size // seq_len
    if n == 0:
        raise InputError("corpus shorter than one window")
    windows = ids[: n * seq_len].reshape(n, seq_len).copy()
    order = np.random.default_rng(seed).permutation(n)
    return torch.from_numpy(windows[order])


def batch_for_step(windows: torch.Tensor, batch_size: int, seed: int, step: int) -> torch.Tensor:
    """Deterministic batch selection: a pure function of (seed, step), so a
    resumed run consumes exactly the same data stream."""
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xDA7A, step])
    idx = rng.integers(0, windows.shape[0], size=batch_size)
    return windows[torch.from_numpy(idx)]


@dataclass(frozen=True)
class SyntheticSource:
    """Token source with an analytically known entropy rate (nats/token)."""

    kind: str  # iid_uniform | bigram | periodic
    vocab_size: int = 0
    matrix: Optional[np.ndarray] = None  # bigram row-stochastic transitions
    pattern: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.kind == "iid_uniform":
            if self.vocab_size < 1:
                raise ConfigError("iid_uniform requires vocab_size >= 1")
        elif self.kind == "bigram":
            m = self.matrix
            if m is None or m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ConfigError("bigram requires a square transition matrix")
            if np.any(m < 0) or np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-9:
                raise ConfigError("bigram rows must be proper distributions")
            object.__setattr__(self, "vocab_size", m.shape[0])
        elif self.kind == "periodic":
            if not self.pattern:
                raise ConfigError("periodic requires a non-empty pattern")
            object.__setattr__(self, "vocab_size", max(self.pattern) + 1)
        else:
            raise ConfigError(f"unknown source kind {self.kind!r}")

    def stationary(self) -> np.ndarray:
        if self.kind != "bigram":
            raise ConfigError("stationary distribution is defined for bigram sources")
        vals, vecs = np.linalg.eig(self.matrix.T)
        idx = int(np.argmin(np.abs(vals - 1.0)))
        pi = np.real(vecs[:, idx])
        pi = np.abs(pi)
        return pi / pi.sum()

    def entropy_rate(self) -> float:
        if self.kind == "iid_uniform":
            return math.log(self.vocab_size)
        if self.kind == "periodic":
            return 0.0
        pi = self.stationary()
        m = self.matrix
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(m > 0, np.log(np.where(m > 0, m, 1.0)), 0.0)
        return float(-(pi[:, None] * m * logs).sum())

    def generate(self, n_tokens: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if self.kind == "iid_uniform":
            return rng.integers(0, self.vocab_size, size=n_tokens)
        if self.kind == "periodic":
            reps = n_tokens // len(self.pattern) + 1
            return np.tile(np.array(self.pattern, dtype=np.int64), reps)[:n_tokens]
        out = np.empty(n_tokens, dtype=np.int64)
        state = rng.choice(self.vocab_size, p=self.stationary())
        cumulative = np.cumsum(self.matrix, axis=1)
        draws = rng.random(n_tokens)
        for i in range(n_tokens):
            out[i] = state
            state = int(np.searchsorted(cumulative[state], draws[i], side="right"))
            state = min(state, self.vocab_size - 1)
        return out

    def to_text(self, n_tokens: int, seed: int = 0) -> str:
        """Render generated ids as letters so the corpus round-trips through
        the char tokenizer with id i mapped to chr('a' + i)."""
        if self.vocab_size > 26:
            raise ConfigError("letter rendering supports vocab_size <= 26")
        ids = self.generate(n_tokens, seed)
        return "".join(chr(ord("a") + int(i)) for i in ids)
