"""Log parsing, relevance filtering, truncation, and synthetic corpora.

A log record is one query with its ranked bidword impressions.  The pipeline
extracts (query, bidword, value) pairs, filters them by embedding cosine
similarity against a threshold, and truncates each query's bidword list to
the most valuable entries.  The synthetic generator produces a corpus whose
queries and bidwords share topic tokens (so relevance is learnable from
text) while values are drawn independently of the text — value and meaning
are deliberately decoupled, which is what makes value-aware decoding
measurable offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import IO, Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

logger = logging.getLogger("valuedec.dataset")

TASK_REWRITE_PROMPT = "Rewrite the search query into one bidding keyword."
TASK_RANKED_LIST_PROMPT = (
    "List bidding keywords for the search query, most valuable first."
)


@dataclass(frozen=True)
class BidwordImpression:
    text: str
    ecpm: float
    clicked: bool = False


@dataclass(frozen=True)
class LogRecord:
    """One logged query with its bidwords, top-ranked first."""

    query: str
    bidwords: tuple[BidwordImpression, ...]


class Embedder(Protocol):
    """Deterministic text embedding; non-zero for non-empty text."""

    def embed(self, text: str) -> np.ndarray: ...


class BagOfTokensEmbedder:
    """Hashed bag-of-tokens embedding, L2-normalized.

    Tokens are whitespace-split words mapped to a fixed-dimension slot by a
    stable hash, so the embedder needs no fitted vocabulary and two texts
    with no shared tokens are (collision permitting) orthogonal.
    """

    name = "bag-of-tokens"

    def __init__(self, dim: int = 4096):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim

    def _slot(self, token: str) -> int:
        digest = hashlib.blake2s(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in text.split():
            vec[self._slot(token)] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


def extract_pairs(
    records: Iterable[LogRecord], *, mode: str = "top"
) -> list[tuple[str, str, float]]:
    """Flatten records into (query, bidword, ecpm) pairs.

    ``top`` mode emits each record's top-ranked bidword; ``clicked`` mode
    emits every clicked bidword instead.  Records with no eligible bidword
    contribute nothing.
    """
    if mode not in ("top", "clicked"):
        raise ValueError(f"unknown extraction mode {mode!r}")
    pairs: list[tuple[str, str, float]] = []
    for record in records:
        if mode == "top":
            if record.bidwords:
                best = record.bidwords[0]
                pairs.append((record.query, best.text, best.ecpm))
        else:
            seen = set()
            for bw in record.bidwords:
                if bw.clicked and bw.text not in seen:
                    seen.add(bw.text)
                    pairs.append((record.query, bw.text, bw.ecpm))
    return pairs


def relevance(x: str, y: str, embedder: Embedder) -> float:
    """Cosine similarity of the two texts' embeddings, in [-1, 1]."""
    if not x or not y:
        raise ValueError("relevance needs non-empty texts")
    ex = np.asarray(embedder.embed(x), dtype=np.float64)
    ey = np.asarray(embedder.embed(y), dtype=np.float64)
    nx = float(np.linalg.norm(ex))
    ny = float(np.linalg.norm(ey))
    if nx == 0.0 or ny == 0.0:
        raise ValueError("embedder produced a zero-norm vector")
    return float(np.dot(ex, ey) / (nx * ny))


def filter_relevant(
    pairs: Iterable[tuple[str, str, float]], tau_rel: float, embedder: Embedder
) -> list[tuple[str, str, float]]:
    """Keep pairs whose relevance strictly exceeds ``tau_rel``."""
    if not -1.0 <= tau_rel <= 1.0:
        raise ValueError("tau_rel must lie in [-1, 1]")
    return [p for p in pairs if relevance(p[0], p[1], embedder) > tau_rel]


def truncate_by_value(
    per_query: Mapping[str, Sequence[tuple[str, float]]], max_k: int
) -> dict[str, list[tuple[str, float]]]:
    """Keep each query's top ``max_k`` bidwords by descending value.

    Equal values rank lexicographically by bidword text, so truncation is
    deterministic.
    """
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    out: dict[str, list[tuple[str, float]]] = {}
    for query, bidwords in per_query.items():
        ranked = sorted(bidwords, key=lambda bw: (-bw[1], bw[0]))
        out[query] = ranked[:max_k]
    return out


# ----------------------------------------------------------------------
# synthetic corpus
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated corpus.

    The vocabulary splits into disjoint per-topic blocks of
    ``words_per_topic`` words plus a shared pool of tail words.  A topic's
    bidwords all share a fixed stem of ``bidword_length - 1`` topic words and
    differ only in their final tail word; its queries mix stem words with
    topic modifier words that never occur in bidwords.  Query/bidword token
    overlap is therefore positive within a topic and zero across topics,
    while values are drawn per distinct bidword, independent of the text.
    """

    vocab_size: int = 1200
    n_queries: int = 10000
    bidwords_per_query: int = 20
    ecpm_distribution: str = "lognormal"  # lognormal | uniform
    ecpm_params: tuple[float, float] = (3.0, 1.3)
    seed: int = 0
    words_per_topic: int = 8
    bidword_length: int = 3
    pool_per_topic: int = 400
    click_rate: float = 0.08

    def __post_init__(self) -> None:
        if self.n_queries < 1 or self.bidwords_per_query < 1:
            raise ValueError("corpus sizes must be positive")
        if self.bidword_length < 2:
            raise ValueError("bidword_length must be >= 2 (stem plus tail)")
        if self.words_per_topic <= self.bidword_length - 1:
            raise ValueError("words_per_topic must exceed the stem length")
        if self.n_topics < 1:
            raise ValueError("vocab_size too small for one topic plus the tail pool")
        if self.bidwords_per_query > self.pool_per_topic:
            raise ValueError("bidwords_per_query cannot exceed pool_per_topic")
        if self.ecpm_distribution not in ("lognormal", "uniform"):
            raise ValueError(f"unknown value distribution {self.ecpm_distribution!r}")

    @property
    def n_topics(self) -> int:
        return (self.vocab_size - self.pool_per_topic) // self.words_per_topic


def gen_synthetic(spec: SyntheticSpec) -> tuple[list[LogRecord], dict[str, float]]:
    """Generate (records, ground-truth value map), deterministic under the seed."""
    rng = np.random.default_rng(spec.seed)
    stem_len = spec.bidword_length - 1
    tails = [f"t{i:04d}" for i in range(spec.pool_per_topic)]
    topic_words = [
        [f"w{t * spec.words_per_topic + i:04d}" for i in range(spec.words_per_topic)]
        for t in range(spec.n_topics)
    ]

    if spec.ecpm_distribution == "lognormal":
        mu, sigma = spec.ecpm_params
        draw_values: Callable[[int], np.ndarray] = lambda n: rng.lognormal(mu, sigma, n)
    else:
        lo, hi = spec.ecpm_params
        draw_values = lambda n: rng.uniform(lo, hi, n)

    pools: list[list[str]] = []
    ecpm_map: dict[str, float] = {}
    for words in topic_words:
        stem = " ".join(words[:stem_len])
        order = rng.permutation(len(tails))
        pool = [f"{stem} {tails[i]}" for i in order]
        values = draw_values(len(pool))
        for text, value in zip(pool, values):
            ecpm_map[text] = float(value)
        pools.append(pool)

    records: list[LogRecord] = []
    used_queries: set[str] = set()
    for q in range(spec.n_queries):
        topic = q % spec.n_topics
        words = topic_words[topic]
        stem_words = words[:stem_len]
        modifiers = words[stem_len:]
        query = ""
        for _ in range(64):
            n_stem = int(rng.integers(1, stem_len + 1))
            n_mod = int(rng.integers(1, min(len(modifiers), 3) + 1))
            picks = [stem_words[i] for i in rng.choice(stem_len, size=n_stem, replace=False)]
            picks += [modifiers[i] for i in rng.choice(len(modifiers), size=n_mod, replace=False)]
            query = " ".join(picks[i] for i in rng.permutation(len(picks)))
            if query not in used_queries:
                break
        used_queries.add(query)
        pool = pools[topic]
        chosen = rng.choice(len(pool), size=spec.bidwords_per_query, replace=False)
        # Rank position follows the serving system's monetization order, so
        # the top-ranked impression is the highest-value one in the record.
        ranked = sorted((pool[i] for i in chosen), key=lambda t: -ecpm_map[t])
        clicked_draws = rng.random(spec.bidwords_per_query)
        impressions = tuple(
            BidwordImpression(
                text=text,
                ecpm=ecpm_map[text],
                clicked=(rank == 0) or bool(clicked_draws[rank] < spec.click_rate),
            )
            for rank, text in enumerate(ranked)
        )
        records.append(LogRecord(query, impressions))
    return records, ecpm_map


def token_overlap(x: str, y: str) -> int:
    return len(set(x.split()) & set(y.split()))


# ----------------------------------------------------------------------
# fine-tuning task export
# ----------------------------------------------------------------------


def format_sft_tasks(
    pairs: Iterable[tuple[str, str, float]],
    ranked_lists: Mapping[str, Sequence[tuple[str, float]]],
) -> tuple[list[dict], list[dict]]:
    """Assemble the two instruction-tuning datasets.

    Task 1 is one record per (query, bidword) pair; task 2 is one record per
    query with its bidword list sorted by descending value (ties
    lexicographic).  Queries with empty lists are skipped.  Both are export
    artifacts for external trainers.
    """
    task1 = [
        {"prompt": TASK_REWRITE_PROMPT, "query": query, "bidword": bidword}
        for query, bidword, _ in pairs
    ]
    task2 = []
    for query in sorted(ranked_lists):
        bidwords = ranked_lists[query]
        if not bidwords:
            continue
        ranked = sorted(bidwords, key=lambda bw: (-bw[1], bw[0]))
        task2.append(
            {
                "prompt": TASK_RANKED_LIST_PROMPT,
                "query": query,
                "bidword_list": [text for text, _ in ranked],
            }
        )
    return task1, task2


# ----------------------------------------------------------------------
# JSONL IO
# ----------------------------------------------------------------------


def write_records_jsonl(
    records: Iterable[LogRecord], sink: str | os.PathLike[str] | IO[str]
) -> int:
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as handle:
            return write_records_jsonl(records, handle)
    count = 0
    for record in records:
        obj = {
            "query": record.query,
            "bidwords": [
                {"text": bw.text, "ecpm": bw.ecpm, "clicked": bw.clicked}
                for bw in record.bidwords
            ],
        }
        sink.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
        count += 1
    return count


def read_records_jsonl(source: str | os.PathLike[str] | IO[str]) -> list[LogRecord]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as handle:
            return read_records_jsonl(handle)
    records: list[LogRecord] = []
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            impressions = tuple(
                BidwordImpression(
                    text=bw["text"],
                    ecpm=_checked_value(bw["ecpm"]),
                    clicked=bool(bw.get("clicked", False)),
                )
                for bw in obj.get("bidwords", [])
            )
            records.append(LogRecord(obj["query"], impressions))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad log record on line {lineno}: {exc}") from exc
    return records


def _checked_value(value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise ValueError(f"ecpm must be finite and non-negative, got {value!r}")
    return value


def write_jsonl(rows: Iterable[dict], sink: str | os.PathLike[str] | IO[str]) -> int:
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as handle:
            return write_jsonl(rows, handle)
    count = 0
    for row in rows:
        sink.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        count += 1
    return count
