"""Next-token probability sources for the decoder.

A :class:`TokenScorer` maps (query, generated prefix) to a probability
vector over the whole vocabulary.  Three desk-scale implementations are
provided: a uniform scorer, an exact table scorer for tests, and an n-gram
model with additive smoothing trainable on (query, bidword) pairs.  The
n-gram model conditions on a hashed query bucket rather than raw query text,
keeping it finite; scorers are immutable after construction and safe to call
concurrently.
"""

from __future__ import annotations

import abc
import hashlib
import os
import struct
from typing import IO, Mapping, Sequence

import numpy as np

_NGRAM_MAGIC = b"VDNGRAM"
_NGRAM_VERSION = 1

DISTRIBUTION_ATOL = 1e-9


class ScorerFormatError(Exception):
    """Raised when a serialized scorer has a bad magic, version, or layout."""


def validate_distribution(probs: np.ndarray, vocab_size: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (vocab_size,):
        raise ValueError(f"distribution has shape {probs.shape}, expected ({vocab_size},)")
    if np.any(probs < 0.0) or not np.isfinite(probs).all():
        raise ValueError("distribution has negative or non-finite entries")
    if abs(float(probs.sum()) - 1.0) > DISTRIBUTION_ATOL:
        raise ValueError(f"distribution sums to {probs.sum()!r}, expected 1")
    return probs


def query_bucket(query: str, n_buckets: int) -> int:
    """Stable hash bucket for a query string (process-independent)."""
    digest = hashlib.blake2s(query.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % n_buckets


class TokenScorer(abc.ABC):
    """Probability source over the next token given a query and prefix."""

    @property
    @abc.abstractmethod
    def vocabulary_size(self) -> int: ...

    @property
    @abc.abstractmethod
    def end_of_sequence(self) -> int: ...

    @abc.abstractmethod
    def next_distribution(self, query: str, prefix: Sequence[int]) -> np.ndarray:
        """Return a length-``vocabulary_size`` vector, non-negative, summing to 1."""


class UniformScorer(TokenScorer):
    def __init__(self, vocabulary_size: int, end_of_sequence: int = 0):
        if not 0 <= end_of_sequence < vocabulary_size:
            raise ValueError("end_of_sequence must be a valid token id")
        self._size = int(vocabulary_size)
        self._eos = int(end_of_sequence)
        self._probs = np.full(self._size, 1.0 / self._size)
        self._probs.flags.writeable = False

    @property
    def vocabulary_size(self) -> int:
        return self._size

    @property
    def end_of_sequence(self) -> int:
        return self._eos

    def next_distribution(self, query: str, prefix: Sequence[int]) -> np.ndarray:
        return self._probs


class TableScorer(TokenScorer):
    """Exact conditional distributions recorded per (query, prefix).

    Lookups missing from the table fall back to uniform.  Stored
    distributions are validated up front; an invalid one is rejected here
    rather than surfacing mid-decode.
    """

    def __init__(
        self,
        table: Mapping[tuple[str, tuple[int, ...]], np.ndarray],
        vocabulary_size: int,
        end_of_sequence: int = 0,
    ):
        if not 0 <= end_of_sequence < vocabulary_size:
            raise ValueError("end_of_sequence must be a valid token id")
        self._size = int(vocabulary_size)
        self._eos = int(end_of_sequence)
        self._table: dict[tuple[str, tuple[int, ...]], np.ndarray] = {}
        for (query, prefix), probs in table.items():
            checked = validate_distribution(probs, self._size).copy()
            checked.flags.writeable = False
            self._table[(query, tuple(prefix))] = checked
        self._uniform = np.full(self._size, 1.0 / self._size)
        self._uniform.flags.writeable = False

    @property
    def vocabulary_size(self) -> int:
        return self._size

    @property
    def end_of_sequence(self) -> int:
        return self._eos

    def next_distribution(self, query: str, prefix: Sequence[int]) -> np.ndarray:
        return self._table.get((query, tuple(prefix)), self._uniform)


class NgramScorer(TokenScorer):
    """Additively smoothed n-gram model over bidword token sequences.

    Conditioning context is (query bucket, last n-1 prefix tokens); the
    end-of-sequence token is appended to every training target so the model
    learns to stop.  Unseen contexts degrade to the uniform distribution.
    """

    def __init__(
        self,
        order: int,
        vocabulary_size: int,
        end_of_sequence: int = 0,
        delta: float = 0.1,
        query_buckets: int = 64,
    ):
        if order < 1:
            raise ValueError("order must be >= 1")
        if delta <= 0.0:
            raise ValueError("smoothing delta must be positive")
        if query_buckets < 1:
            raise ValueError("query_buckets must be >= 1")
        if not 0 <= end_of_sequence < vocabulary_size:
            raise ValueError("end_of_sequence must be a valid token id")
        self.order = int(order)
        self.delta = float(delta)
        self.query_buckets = int(query_buckets)
        self._size = int(vocabulary_size)
        self._eos = int(end_of_sequence)
        # context key -> {token: count}; totals cached for normalization
        self._counts: dict[tuple[int, ...], dict[int, int]] = {}
        self._totals: dict[tuple[int, ...], int] = {}

    @property
    def vocabulary_size(self) -> int:
        return self._size

    @property
    def end_of_sequence(self) -> int:
        return self._eos

    @property
    def context_count(self) -> int:
        return len(self._counts)

    def _context(self, query: str, prefix: Sequence[int]) -> tuple[int, ...]:
        bucket = query_bucket(query, self.query_buckets)
        if self.order == 1:
            return (bucket,)
        window = tuple(prefix[-(self.order - 1):])
        return (bucket,) + window

    def observe(self, query: str, tokens: Sequence[int]) -> None:
        target = list(tokens) + [self._eos]
        for i, token in enumerate(target):
            if not 0 <= token < self._size:
                raise ValueError(f"token {token} outside vocabulary of size {self._size}")
            key = self._context(query, target[:i])
            counts = self._counts.get(key)
            if counts is None:
                counts = {}
                self._counts[key] = counts
                self._totals[key] = 0
            counts[token] = counts.get(token, 0) + 1
            self._totals[key] += 1

    def next_distribution(self, query: str, prefix: Sequence[int]) -> np.ndarray:
        key = self._context(query, prefix)
        counts = self._counts.get(key)
        probs = np.full(self._size, self.delta)
        total = self.delta * self._size
        if counts:
            probs[list(counts.keys())] += np.fromiter(
                counts.values(), dtype=np.float64, count=len(counts)
            )
            total += self._totals[key]
        probs /= total
        return probs

    def log_prob(self, query: str, tokens: Sequence[int]) -> float:
        """Sequence log-probability including the end-of-sequence step."""
        target = list(tokens) + [self._eos]
        logp = 0.0
        for i, token in enumerate(target):
            key = self._context(query, target[:i])
            counts = self._counts.get(key)
            count = counts.get(token, 0) if counts else 0
            total = self._totals.get(key, 0)
            logp += float(
                np.log(count + self.delta) - np.log(total + self.delta * self._size)
            )
        return logp

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, sink: str | os.PathLike[str] | IO[bytes]) -> None:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "wb") as handle:
                self.save(handle)
            return
        write = sink.write
        write(_NGRAM_MAGIC)
        write(
            struct.pack(
                "<BBIIId",
                _NGRAM_VERSION,
                self.order,
                self._size,
                self._eos,
                self.query_buckets,
                self.delta,
            )
        )
        write(struct.pack("<Q", len(self._counts)))
        for key in sorted(self._counts):
            counts = self._counts[key]
            write(struct.pack("<B", len(key)))
            write(struct.pack(f"<{len(key)}I", *key))
            write(struct.pack("<I", len(counts)))
            for token in sorted(counts):
                write(struct.pack("<IQ", token, counts[token]))
        sink.flush()

    @classmethod
    def load(cls, source: str | os.PathLike[str] | IO[bytes]) -> "NgramScorer":
        if isinstance(source, (str, os.PathLike)):
            with open(source, "rb") as handle:
                return cls.load(handle)
        data = source.read()
        offset = 0

        def take(fmt: str) -> tuple:
            nonlocal offset
            size = struct.calcsize(fmt)
            if offset + size > len(data):
                raise ScorerFormatError("truncated stream")
            values = struct.unpack_from(fmt, data, offset)
            offset += size
            return values

        magic = data[: len(_NGRAM_MAGIC)]
        if magic != _NGRAM_MAGIC:
            raise ScorerFormatError(f"bad magic {magic!r}, expected {_NGRAM_MAGIC!r}")
        offset = len(_NGRAM_MAGIC)
        version, order, size, eos, buckets, delta = take("<BBIIId")
        if version != _NGRAM_VERSION:
            raise ScorerFormatError(f"unsupported format version {version}")
        model = cls(order, size, eos, delta, buckets)
        (n_contexts,) = take("<Q")
        for _ in range(n_contexts):
            (key_len,) = take("<B")
            key = take(f"<{key_len}I")
            (nnz,) = take("<I")
            counts: dict[int, int] = {}
            total = 0
            for _ in range(nnz):
                token, count = take("<IQ")
                counts[token] = count
                total += count
            model._counts[key] = counts
            model._totals[key] = total
        if offset != len(data):
            raise ScorerFormatError(f"{len(data) - offset} trailing bytes after model")
        return model


def fit_ngram(
    pairs: Sequence[tuple[str, Sequence[int]]],
    n: int,
    delta: float,
    vocabulary_size: int,
    end_of_sequence: int = 0,
    query_buckets: int = 64,
) -> NgramScorer:
    """Fit an additively smoothed n-gram scorer on (query, bidword tokens) pairs."""
    if not pairs:
        raise ValueError("cannot fit an n-gram model on an empty pair list")
    model = NgramScorer(n, vocabulary_size, end_of_sequence, delta, query_buckets)
    for query, tokens in pairs:
        model.observe(query, tokens)
    return model


def uniform_scorer(vocabulary_size: int, end_of_sequence: int = 0) -> UniformScorer:
    return UniformScorer(vocabulary_size, end_of_sequence)


def table_scorer(
    table: Mapping[tuple[str, tuple[int, ...]], np.ndarray],
    vocabulary_size: int,
    end_of_sequence: int = 0,
) -> TableScorer:
    return TableScorer(table, vocabulary_size, end_of_sequence)


def perplexity(model: NgramScorer, pairs: Sequence[tuple[str, Sequence[int]]]) -> float:
    """Per-token perplexity of held-out pairs, end-of-sequence steps included."""
    if not pairs:
        raise ValueError("perplexity needs at least one pair")
    total_logp = 0.0
    total_tokens = 0
    for query, tokens in pairs:
        total_logp += model.log_prob(query, tokens)
        total_tokens += len(tokens) + 1
    return float(np.exp(-total_logp / total_tokens))
