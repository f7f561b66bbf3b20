"""Offline evaluation metrics and report assembly.

Covers hitrate@K against clicked bidwords, rank correlation between the
emitted order and the value order, out-of-vocabulary rate, macro-averaged
value, mean relevance, and a serializable per-run report.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import IO, Container, Iterable, Mapping, Sequence

from .dataset import Embedder, relevance

logger = logging.getLogger("valuedec.metrics")

REPORT_SCHEMA_VERSION = 1


def hitrate_at_k(
    rewrites: Mapping[str, Sequence[str]],
    clicks: Mapping[str, Container[str] | set[str]],
    k: int,
) -> float:
    """Total clicked bidwords recovered in the top-K, over total clicked.

    Queries appearing in either map participate; a query with no clicked
    bidwords adds nothing to numerator or denominator.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    total = 0
    for query in set(rewrites) | set(clicks):
        clicked = set(clicks.get(query, ()))
        if not clicked:
            continue
        total += len(clicked)
        top = rewrites.get(query, ())[:k]
        hits += len(clicked & set(top))
    if total == 0:
        raise ValueError("no query has any clicked bidword")
    return hits / total


def _average_ranks(items: Sequence[str], value_of: Mapping[str, float]) -> dict[str, float]:
    # Rank 1 = highest value; ties share the average of their positions.
    ordered = sorted(items, key=lambda it: (-value_of[it], it))
    ranks: dict[str, float] = {}
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and value_of[ordered[j + 1]] == value_of[ordered[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for pos in range(i, j + 1):
            ranks[ordered[pos]] = avg
        i = j + 1
    return ranks


def spearman_rho(
    predicted_order: Sequence[str], value_of: Mapping[str, float]
) -> float:
    """Rank correlation of an emitted order against the value order.

    Predicted ranks are the emission positions; value ranks are descending
    with fractional average ranks on ties.  Computed as
    ``1 - 6 * sum(d_i^2) / (n * (n^2 - 1))`` over items present in both, so
    with ties it is an approximation of the rank Pearson coefficient.
    """
    items = [it for it in predicted_order if it in value_of]
    if len(items) != len(set(items)):
        raise ValueError("predicted order contains duplicates")
    n = len(items)
    if n < 2:
        raise ValueError("rank correlation needs at least two shared items")
    value_ranks = _average_ranks(items, value_of)
    d2 = sum((pos + 1 - value_ranks[item]) ** 2 for pos, item in enumerate(items))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def oovr(candidates: Sequence[Sequence[int] | str], vocabulary) -> float:
    """Fraction of candidates not contained in the bidword vocabulary.

    ``vocabulary`` may be anything with a ``contains`` method (a trie) or a
    container of items (a set of texts or token tuples).
    """
    if not candidates:
        raise ValueError("oovr needs at least one candidate")
    if hasattr(vocabulary, "contains"):
        contained = vocabulary.contains
    else:
        contained = lambda c: (tuple(c) if not isinstance(c, str) else c) in vocabulary
    misses = sum(0 if contained(c) else 1 for c in candidates)
    return misses / len(candidates)


def mean_ecpm(
    candidates_per_query: Mapping[str, Sequence[str]],
    ecpm: Mapping[str, float],
) -> float:
    """Macro-averaged value: per-query mean first, then across queries.

    Candidates missing from the value map count as zero, with a warning.
    """
    per_query: list[float] = []
    for query, candidates in candidates_per_query.items():
        if not candidates:
            continue
        total = 0.0
        for candidate in candidates:
            value = ecpm.get(candidate)
            if value is None:
                logger.warning("no value for candidate %r (query %r); counted as 0", candidate, query)
                value = 0.0
            total += value
        per_query.append(total / len(candidates))
    if not per_query:
        raise ValueError("no query has any candidate")
    return sum(per_query) / len(per_query)


@dataclass
class PerQueryStats:
    n_candidates: int
    spearman_rho: float | None
    mean_ecpm: float
    mean_relevance: float


@dataclass
class EvaluationReport:
    """Aggregate metrics for one run, with a per-query breakdown."""

    hitrate_at: dict[int, float]
    spearman_rho: float
    oovr: float
    mean_ecpm: float
    mean_relevance: float
    embedder: str
    n_queries: int
    per_query: dict[str, PerQueryStats] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for k, rate in self.hitrate_at.items():
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"hitrate@{k} outside [0, 1]")
        if not -1.0 <= self.spearman_rho <= 1.0:
            raise ValueError("spearman_rho outside [-1, 1]")
        if not 0.0 <= self.oovr <= 1.0:
            raise ValueError("oovr outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "hitrate_at": {str(k): v for k, v in sorted(self.hitrate_at.items())},
            "spearman_rho": self.spearman_rho,
            "oovr": self.oovr,
            "mean_ecpm": self.mean_ecpm,
            "mean_relevance": self.mean_relevance,
            "embedder": self.embedder,
            "n_queries": self.n_queries,
            "per_query": {
                q: {
                    "n_candidates": s.n_candidates,
                    "spearman_rho": s.spearman_rho,
                    "mean_ecpm": s.mean_ecpm,
                    "mean_relevance": s.mean_relevance,
                }
                for q, s in sorted(self.per_query.items())
            },
        }

    @classmethod
    def from_json_dict(cls, raw: Mapping) -> "EvaluationReport":
        version = raw.get("schema_version")
        if version != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {version!r}")
        return cls(
            hitrate_at={int(k): float(v) for k, v in raw["hitrate_at"].items()},
            spearman_rho=float(raw["spearman_rho"]),
            oovr=float(raw["oovr"]),
            mean_ecpm=float(raw["mean_ecpm"]),
            mean_relevance=float(raw["mean_relevance"]),
            embedder=str(raw["embedder"]),
            n_queries=int(raw["n_queries"]),
            per_query={
                q: PerQueryStats(
                    n_candidates=int(s["n_candidates"]),
                    spearman_rho=None if s["spearman_rho"] is None else float(s["spearman_rho"]),
                    mean_ecpm=float(s["mean_ecpm"]),
                    mean_relevance=float(s["mean_relevance"]),
                )
                for q, s in raw.get("per_query", {}).items()
            },
        )

    def save_json(self, sink: str | os.PathLike[str] | IO[str]) -> None:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "w", encoding="utf-8") as handle:
                self.save_json(handle)
            return
        json.dump(self.to_json_dict(), sink, indent=2, sort_keys=True)
        sink.write("\n")

    @classmethod
    def load_json(cls, source: str | os.PathLike[str] | IO[str]) -> "EvaluationReport":
        if isinstance(source, (str, os.PathLike)):
            with open(source, "r", encoding="utf-8") as handle:
                return cls.load_json(handle)
        return cls.from_json_dict(json.load(source))

    def to_table(self) -> str:
        rows = [("queries", f"{self.n_queries}")]
        rows += [(f"hitrate@{k}", f"{v:.4f}") for k, v in sorted(self.hitrate_at.items())]
        rows += [
            ("spearman_rho", f"{self.spearman_rho:.4f}"),
            ("oovr", f"{self.oovr:.4f}"),
            ("mean_ecpm", f"{self.mean_ecpm:.2f}"),
            ("mean_relevance", f"{self.mean_relevance:.4f}"),
            ("embedder", self.embedder),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)

    def write_per_query_csv(self, sink: str | os.PathLike[str] | IO[str]) -> None:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "w", encoding="utf-8", newline="") as handle:
                self.write_per_query_csv(handle)
            return
        writer = csv.writer(sink)
        writer.writerow(["query", "n_candidates", "spearman_rho", "mean_ecpm", "mean_relevance"])
        for query, stats in sorted(self.per_query.items()):
            writer.writerow(
                [
                    query,
                    stats.n_candidates,
                    "" if stats.spearman_rho is None else f"{stats.spearman_rho:.6f}",
                    f"{stats.mean_ecpm:.6f}",
                    f"{stats.mean_relevance:.6f}",
                ]
            )


def evaluate(
    rewrites: Mapping[str, Sequence[str]],
    clicks: Mapping[str, set[str]],
    ecpm: Mapping[str, float],
    bidword_set: Container[str],
    embedder: Embedder,
    ks: Iterable[int] = (50,),
) -> EvaluationReport:
    """Assemble the full metric report for one decoded run.

    ``rewrites`` maps each query to its emitted candidates in rank order.
    The overall rank correlation is the macro average over queries with at
    least two candidates; relevance is averaged over all emitted
    (query, candidate) pairs.
    """
    if not rewrites:
        raise ValueError("cannot evaluate an empty run")
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("metric Ks must be positive")

    per_query: dict[str, PerQueryStats] = {}
    rho_values: list[float] = []
    relevance_sum = 0.0
    relevance_count = 0
    all_candidates: list[str] = []
    for query, candidates in rewrites.items():
        if not candidates:
            continue
        all_candidates.extend(candidates)
        rels = [relevance(query, c, embedder) for c in candidates]
        values = [ecpm.get(c, 0.0) for c in candidates]
        rho = None
        resolvable = [c for c in candidates if c in ecpm]
        if len(resolvable) >= 2:
            rho = spearman_rho(list(candidates), ecpm)
            rho_values.append(rho)
        per_query[query] = PerQueryStats(
            n_candidates=len(candidates),
            spearman_rho=rho,
            mean_ecpm=sum(values) / len(values),
            mean_relevance=sum(rels) / len(rels),
        )
        relevance_sum += sum(rels)
        relevance_count += len(rels)
    if not per_query:
        raise ValueError("cannot evaluate an empty run")

    # Hitrate is scored over the run's own query set; click data for queries
    # that were never decoded does not enter the denominator.
    run_clicks = {q: set(clicks.get(q, ())) for q in rewrites}
    report = EvaluationReport(
        hitrate_at={k: hitrate_at_k(rewrites, run_clicks, k) for k in ks},
        spearman_rho=sum(rho_values) / len(rho_values) if rho_values else 0.0,
        oovr=oovr(all_candidates, bidword_set),
        mean_ecpm=mean_ecpm(rewrites, ecpm),
        mean_relevance=relevance_sum / relevance_count,
        embedder=getattr(embedder, "name", type(embedder).__name__),
        n_queries=len(per_query),
        per_query=per_query,
    )
    return report
