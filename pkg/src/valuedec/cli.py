"""Command-line surface for the value-aware decoding pipeline.

Subcommands build and update tries, fit scorers, decode query files,
generate synthetic corpora, evaluate runs, sweep the depth schedules, and
run the alignment demo.  Flag precedence is CLI > --config file > built-in
defaults, the effective configuration is echoed into a ``.meta.json``
sidecar next to every output artifact, and all file writes go through a
write-temp-then-rename step so an interrupted command never leaves a
corrupt file behind.  ``VALUEDEC_LOG`` controls log verbosity.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from . import __version__
from .align import sample_pairs, wdpo_demo, write_pairs_jsonl
from .dataset import (
    BagOfTokensEmbedder,
    LogRecord,
    SyntheticSpec,
    extract_pairs,
    gen_synthetic,
    read_records_jsonl,
    write_jsonl,
    write_records_jsonl,
)
from .decoder import (
    Candidate,
    DecodeConfig,
    STANDARD_SCHEDULES,
    ThetaSchedule,
    ValueMix,
    decode_topk,
)
from .metrics import EvaluationReport, evaluate, spearman_rho
from .scorer import NgramScorer, TokenScorer, UniformScorer, fit_ngram
from .tokenizer import TokenizationError, Tokenizer
from .trie import (
    BidwordEntry,
    TsvFormatError,
    UpdateParams,
    WeightedTrie,
    build_trie,
    read_bidword_tsv,
)

logger = logging.getLogger("valuedec.cli")


class CliError(Exception):
    """User-facing command failure; rendered as a structured JSON error."""


# ----------------------------------------------------------------------
# shared plumbing
# ----------------------------------------------------------------------


@contextlib.contextmanager
def atomic_write(path: str, mode: str = "w"):
    """Write to a sibling temp file and rename into place on success."""
    tmp = f"{path}.tmp.{os.getpid()}"
    handle = open(tmp, mode, encoding=None if "b" in mode else "utf-8")
    try:
        yield handle
        handle.flush()
        os.fsync(handle.fileno())
        handle.close()
        os.replace(tmp, path)
    except BaseException:
        handle.close()
        with contextlib.suppress(OSError):
            os.remove(tmp)
        raise


def _write_meta(out_path: str, command: str, effective: Mapping) -> None:
    meta = {"tool": "valuedec", "version": __version__, "command": command, **effective}
    with atomic_write(out_path + ".meta.json") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _vocab_path(args: argparse.Namespace, trie_path: str) -> str:
    return args.vocab if args.vocab else trie_path + ".vocab"


def _decode_config(args: argparse.Namespace) -> DecodeConfig:
    config = DecodeConfig()
    if getattr(args, "config", None):
        config = DecodeConfig.from_json_file(_require_file(args.config, "config file"))
    overrides = {}
    for flag, field_name in (
        ("k", "k"),
        ("beam", "beam_width"),
        ("mode", "mode"),
        ("seed", "seed"),
        ("max_depth", "max_depth"),
        ("value_temperature", "value_temperature"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "theta", None) is not None:
        overrides["theta"] = ThetaSchedule.parse(args.theta)
    alpha_v = getattr(args, "alpha_v", None)
    beta_v = getattr(args, "beta_v", None)
    if alpha_v is not None or beta_v is not None:
        mix = config.value_mix
        overrides["value_mix"] = ValueMix(
            mix.alpha_v if alpha_v is None else alpha_v,
            mix.beta_v if beta_v is None else beta_v,
        )
    if getattr(args, "strict", False):
        overrides["strict"] = True
    return replace(config, **overrides) if overrides else config


def _load_scorer(spec: str, tokenizer: Tokenizer) -> TokenScorer:
    if spec == "uniform":
        return UniformScorer(tokenizer.vocab_size, tokenizer.eos_id)
    scorer = NgramScorer.load(_require_file(spec, "scorer file"))
    if scorer.vocabulary_size != tokenizer.vocab_size:
        raise CliError(
            f"scorer vocabulary size {scorer.vocabulary_size} does not match "
            f"tokenizer vocabulary size {tokenizer.vocab_size}"
        )
    if scorer.end_of_sequence != tokenizer.eos_id:
        raise CliError("scorer end-of-sequence id does not match the tokenizer")
    return scorer


# ----------------------------------------------------------------------
# corpus pipeline (shared by decode, eval, and the schedule sweep)
# ----------------------------------------------------------------------


def corpus_tokenizer(ecpm_map: Mapping[str, float]) -> Tokenizer:
    return Tokenizer.build(sorted(ecpm_map))


def corpus_trie(ecpm_map: Mapping[str, float], tokenizer: Tokenizer) -> WeightedTrie:
    return build_trie(
        BidwordEntry(tuple(tokenizer.encode(text)), value, text)
        for text, value in sorted(ecpm_map.items())
    )


def corpus_ngram(
    records: Sequence[LogRecord],
    tokenizer: Tokenizer,
    *,
    order: int = 2,
    delta: float = 0.05,
    query_buckets: int = 64,
) -> NgramScorer:
    pairs = [
        (query, tokenizer.encode(bidword))
        for query, bidword, _ in extract_pairs(records, mode="top")
    ]
    return fit_ngram(pairs, order, delta, tokenizer.vocab_size, tokenizer.eos_id, query_buckets)


def decode_queries(
    queries: Iterable[str],
    trie: WeightedTrie,
    scorer: TokenScorer,
    tokenizer: Tokenizer,
    config: DecodeConfig,
) -> dict[str, list[tuple[str, Candidate]]]:
    """Decode queries in order; each candidate is paired with its surface text."""
    out: dict[str, list[tuple[str, Candidate]]] = {}
    for query in queries:
        candidates = decode_topk(query, trie, scorer, config)
        out[query] = [(tokenizer.decode(c.tokens), c) for c in candidates]
    return out


def clicked_sets(records: Iterable[LogRecord]) -> dict[str, set[str]]:
    clicks: dict[str, set[str]] = {}
    for record in records:
        bucket = clicks.setdefault(record.query, set())
        bucket.update(bw.text for bw in record.bidwords if bw.clicked)
    return clicks


@dataclass(frozen=True)
class SweepSettings:
    """Desk-scale defaults for the schedule sweep experiment.

    The defaults are calibrated for the synthetic corpora this package
    generates: near-per-query hash buckets and a small smoothing delta keep
    the scorer sharply on-topic, and the value softmax runs at a temperature
    near the corpus value scale so the tilt stays graded instead of
    collapsing to the single best branch.
    """

    eval_queries: int = 100
    k: int = 50
    beam_width: int = 64
    ks: tuple[int, ...] = (10, 50)
    ngram_order: int = 2
    delta: float = 0.1
    query_buckets: int = 65536
    value_temperature: float = 240.0
    seed: int = 0


SWEEP_COLUMNS = ("schedule", "theta") + tuple(
    f"hitrate@{k}" for k in SweepSettings().ks
) + ("spearman_rho", "relevance", "mean_ecpm", "oovr")


def run_theta_sweep(
    records: Sequence[LogRecord],
    ecpm_map: Mapping[str, float],
    settings: SweepSettings = SweepSettings(),
    schedules: Sequence[tuple[str, ThetaSchedule]] = STANDARD_SCHEDULES,
) -> tuple[list[dict], dict[str, EvaluationReport]]:
    """Evaluate each depth schedule on a corpus; one result row per schedule.

    The scorer is an n-gram model fit on the corpus text alone, so any value
    lift in the higher rows comes from the trie, not the scorer.
    """
    tokenizer = corpus_tokenizer(ecpm_map)
    trie = corpus_trie(ecpm_map, tokenizer)
    scorer = corpus_ngram(
        records,
        tokenizer,
        order=settings.ngram_order,
        delta=settings.delta,
        query_buckets=settings.query_buckets,
    )
    eval_queries: list[str] = []
    seen: set[str] = set()
    for record in records:
        if record.query not in seen:
            seen.add(record.query)
            eval_queries.append(record.query)
        if len(eval_queries) >= settings.eval_queries:
            break
    clicks = clicked_sets(records)
    embedder = BagOfTokensEmbedder()

    rows: list[dict] = []
    reports: dict[str, EvaluationReport] = {}
    base = DecodeConfig(
        k=settings.k,
        beam_width=settings.beam_width,
        mode="beam",
        seed=settings.seed,
        value_temperature=settings.value_temperature,
    )
    for name, schedule in schedules:
        config = replace(base, theta=schedule)
        run = decode_queries(eval_queries, trie, scorer, tokenizer, config)
        rewrites = {q: [text for text, _ in cands] for q, cands in run.items()}
        report = evaluate(rewrites, clicks, ecpm_map, set(ecpm_map), embedder, settings.ks)
        reports[name] = report
        row = {"schedule": name, "theta": schedule.spec_string()}
        for k in settings.ks:
            row[f"hitrate@{k}"] = report.hitrate_at[k]
        row["spearman_rho"] = report.spearman_rho
        row["relevance"] = report.mean_relevance
        row["mean_ecpm"] = report.mean_ecpm
        row["oovr"] = report.oovr
        rows.append(row)
    return rows, reports


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_build_trie(args: argparse.Namespace) -> int:
    rows = read_bidword_tsv(_require_file(args.input, "input TSV"), strict=args.strict)
    if not rows:
        raise CliError("input TSV produced no usable rows")
    if args.vocab and os.path.exists(args.vocab):
        tokenizer = Tokenizer.load(args.vocab)
        vocab_out = args.vocab
    else:
        tokenizer = Tokenizer.build(text for text, _ in rows)
        vocab_out = args.vocab or args.out + ".vocab"
        with atomic_write(vocab_out) as handle:
            tokenizer.save(handle)
    trie = build_trie(
        BidwordEntry(tuple(tokenizer.encode(text)), value, text) for text, value in rows
    )
    with atomic_write(args.out, "wb") as handle:
        trie.save(handle)
    _write_meta(
        args.out,
        "build-trie",
        {"input": args.input, "vocab": vocab_out, "strict": args.strict},
    )
    print(json.dumps(_trie_summary(trie), sort_keys=True))
    return 0


def _trie_summary(trie: WeightedTrie) -> dict:
    return {
        "bidwords": len(trie),
        "nodes": trie.node_count(),
        "max_token_id": trie.max_token_id,
        "depth_histogram": {str(k): v for k, v in trie.depth_histogram().items()},
        "root_mean": trie.root.mean,
        "root_max": trie.root.max,
    }


def cmd_inspect(args: argparse.Namespace) -> int:
    trie = WeightedTrie.load(_require_file(args.trie, "trie file"))
    print(json.dumps(_trie_summary(trie), indent=2, sort_keys=True))
    return 0


def cmd_update_trie(args: argparse.Namespace) -> int:
    params = UpdateParams(args.alpha_u, args.beta_u)
    trie = WeightedTrie.load(_require_file(args.trie, "trie file"))
    tokenizer = Tokenizer.load(_require_file(_vocab_path(args, args.trie), "vocabulary"))
    rows = read_bidword_tsv(_require_file(args.feed, "feed TSV"), strict=args.strict)
    applied = 0
    for text, value in rows:
        try:
            tokens = tokenizer.encode(text)
        except TokenizationError as exc:
            if args.strict:
                raise CliError(f"feed row {text!r}: {exc}") from exc
            logger.warning("skipping feed row %r: %s", text, exc)
            continue
        trie.momentum_update(tokens, value, params)
        applied += 1
    with atomic_write(args.trie, "wb") as handle:
        trie.save(handle)
    _write_meta(
        args.trie,
        "update-trie",
        {"feed": args.feed, "alpha_u": args.alpha_u, "beta_u": args.beta_u, "applied": applied},
    )
    print(json.dumps({"applied": applied, **_trie_summary(trie)}, sort_keys=True))
    return 0


def cmd_fit_scorer(args: argparse.Namespace) -> int:
    records = read_records_jsonl(_require_file(args.records, "records file"))
    tokenizer = Tokenizer.load(_require_file(args.vocab, "vocabulary"))
    scorer = corpus_ngram(
        records,
        tokenizer,
        order=args.n,
        delta=args.delta,
        query_buckets=args.buckets,
    )
    with atomic_write(args.out, "wb") as handle:
        scorer.save(handle)
    _write_meta(
        args.out,
        "fit-scorer",
        {"records": args.records, "n": args.n, "delta": args.delta, "buckets": args.buckets},
    )
    print(json.dumps({"contexts": scorer.context_count, "order": scorer.order}, sort_keys=True))
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    config = _decode_config(args)
    trie = WeightedTrie.load(_require_file(args.trie, "trie file"))
    tokenizer = Tokenizer.load(_require_file(_vocab_path(args, args.trie), "vocabulary"))
    scorer = _load_scorer(args.scorer, tokenizer)
    queries: list[str] = []
    with open(_require_file(args.queries, "queries file"), "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                queries.append(json.loads(line)["query"])
            except (KeyError, ValueError) as exc:
                raise CliError(f"bad query record on line {lineno}: {exc}") from exc
    with atomic_write(args.out) as handle:
        for query in queries:
            candidates = decode_topk(query, trie, scorer, config)
            obj = {
                "query": query,
                "candidates": [
                    {
                        "text": tokenizer.decode(c.tokens),
                        "log_score": c.log_score_adjusted,
                        "value": c.word_value,
                    }
                    for c in candidates
                ],
            }
            handle.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    _write_meta(
        args.out,
        "decode",
        {
            "trie": args.trie,
            "scorer": args.scorer,
            "queries": args.queries,
            "decode": config.to_json_dict(),
        },
    )
    print(json.dumps({"queries": len(queries), "out": args.out}, sort_keys=True))
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        vocab_size=args.vocab_size,
        n_queries=args.queries,
        bidwords_per_query=args.bidwords_per_query,
        ecpm_distribution=args.ecpm_dist,
        ecpm_params=tuple(args.ecpm_params),
        seed=args.seed,
        words_per_topic=args.words_per_topic,
        bidword_length=args.bidword_length,
        pool_per_topic=args.pool_per_topic,
    )
    records, ecpm_map = gen_synthetic(spec)
    with atomic_write(args.out_records) as handle:
        write_records_jsonl(records, handle)
    with atomic_write(args.out_ecpm) as handle:
        json.dump(ecpm_map, handle, ensure_ascii=False, sort_keys=True)
        handle.write("\n")
    _write_meta(args.out_records, "gen-synthetic", {"spec": dataclasses.asdict(spec)})
    print(
        json.dumps(
            {"records": len(records), "bidwords": len(ecpm_map), "seed": spec.seed},
            sort_keys=True,
        )
    )
    return 0


def _load_ecpm_map(path: str) -> dict[str, float]:
    with open(_require_file(path, "ecpm map"), "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    return {str(k): float(v) for k, v in raw.items()}


def cmd_eval(args: argparse.Namespace) -> int:
    records = read_records_jsonl(_require_file(args.records, "records file"))
    ecpm_map = _load_ecpm_map(args.ecpm)
    rewrites: dict[str, list[str]] = {}
    with open(_require_file(args.run, "run file"), "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            rewrites[obj["query"]] = [c["text"] for c in obj["candidates"]]
    report = evaluate(
        rewrites,
        clicked_sets(records),
        ecpm_map,
        set(ecpm_map),
        BagOfTokensEmbedder(),
        ks=args.ks,
    )
    with atomic_write(args.out) as handle:
        report.save_json(handle)
    if args.per_query_csv:
        with atomic_write(args.per_query_csv) as handle:
            report.write_per_query_csv(handle)
    _write_meta(args.out, "eval", {"run": args.run, "records": args.records, "ks": args.ks})
    print(report.to_table())
    return 0


def cmd_theta_sweep(args: argparse.Namespace) -> int:
    records = read_records_jsonl(_require_file(args.records, "records file"))
    ecpm_map = _load_ecpm_map(args.ecpm)
    overrides = {
        "eval_queries": args.eval_queries,
        "k": args.k,
        "beam_width": args.beam,
        "delta": args.delta,
        "value_temperature": args.value_temperature,
        "seed": args.seed,
    }
    settings = replace(
        SweepSettings(), **{k: v for k, v in overrides.items() if v is not None}
    )
    rows, _ = run_theta_sweep(records, ecpm_map, settings)
    columns = list(rows[0].keys())
    with atomic_write(args.out) as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    _write_meta(
        args.out,
        "theta-sweep",
        {"records": args.records, "settings": dataclasses.asdict(settings)},
    )
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


def cmd_wdpo_demo(args: argparse.Namespace) -> int:
    if args.candidates:
        with open(_require_file(args.candidates, "candidates file"), "r", encoding="utf-8") as handle:
            candidates = {str(k): float(v) for k, v in json.load(handle).items()}
    else:
        candidates = {"alpha": 320.0, "bravo": 180.0, "charlie": 95.0, "delta": 40.0, "echo": 12.0}
    result = wdpo_demo(
        candidates,
        steps=args.steps,
        learning_rate=args.lr,
        beta=args.beta,
        seed=args.seed,
    )
    trace = result.loss_trace
    window = max(1, len(trace) // 10)
    head = sum(trace[:window]) / window
    tail = sum(trace[-window:]) / window
    rho = spearman_rho(result.ranking(), result.ecpm)
    summary = {
        "candidates": len(candidates),
        "steps": args.steps,
        "loss_head": head,
        "loss_tail": tail,
        "ranking": result.ranking(),
        "ranking_rho_vs_value": rho,
    }
    if args.out:
        with atomic_write(args.out) as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
        _write_meta(args.out, "wdpo-demo", {"steps": args.steps, "lr": args.lr, "beta": args.beta})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_sample_pairs(args: argparse.Namespace) -> int:
    records = read_records_jsonl(_require_file(args.records, "records file"))
    per_query: dict[str, dict[str, float]] = {}
    for record in records:
        bucket = per_query.setdefault(record.query, {})
        for bw in record.bidwords:
            bucket[bw.text] = bw.ecpm
    pairs = sample_pairs(per_query, args.tau, args.count, args.seed)
    with atomic_write(args.out) as handle:
        written = write_pairs_jsonl(pairs, handle)
    _write_meta(args.out, "sample-pairs", {"tau": args.tau, "count": args.count, "seed": args.seed})
    print(json.dumps({"pairs": written}, sort_keys=True))
    return 0


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def _add_decode_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with decode defaults")
    parser.add_argument("--k", type=int, help="number of candidates per query")
    parser.add_argument("--beam", type=int, help="beam width")
    parser.add_argument("--mode", choices=["greedy", "beam", "sample"])
    parser.add_argument("--theta", help="zero | const:C | linear:S | exp:B,S | custom:v1,v2,...")
    parser.add_argument("--alpha-v", dest="alpha_v", type=float, help="weight on subtree mean")
    parser.add_argument("--beta-v", dest="beta_v", type=float, help="weight on subtree max")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-depth", dest="max_depth", type=int)
    parser.add_argument(
        "--value-temperature", dest="value_temperature", type=float,
        help="temperature for the value softmax",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="valuedec",
        description="Value-aware constrained decoding over a weighted bidword trie.",
    )
    parser.add_argument("--version", action="version", version=f"valuedec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-trie", help="build a trie from a bidword TSV")
    p.add_argument("--input", required=True, help="TSV with bidword<TAB>ecpm lines")
    p.add_argument("--out", required=True, help="output trie file")
    p.add_argument("--vocab", help="vocabulary file to reuse or write")
    p.add_argument("--strict", action="store_true", help="abort on malformed lines")
    p.set_defaults(func=cmd_build_trie)

    p = sub.add_parser("inspect", help="print trie statistics")
    p.add_argument("--trie", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("update-trie", help="apply a value feed with momentum updates")
    p.add_argument("--trie", required=True)
    p.add_argument("--vocab", help="vocabulary file (defaults to <trie>.vocab)")
    p.add_argument("--feed", required=True, help="TSV with bidword<TAB>ecpm lines")
    p.add_argument("--alpha-u", dest="alpha_u", type=float, required=True)
    p.add_argument("--beta-u", dest="beta_u", type=float, required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_update_trie)

    p = sub.add_parser("fit-scorer", help="fit an n-gram scorer on a records file")
    p.add_argument("--records", required=True, help="JSONL log records")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--buckets", type=int, default=64)
    p.set_defaults(func=cmd_fit_scorer)

    p = sub.add_parser("decode", help="decode a JSONL query file")
    p.add_argument("--trie", required=True)
    p.add_argument("--vocab", help="vocabulary file (defaults to <trie>.vocab)")
    p.add_argument("--scorer", required=True, help="n-gram scorer file, or 'uniform'")
    p.add_argument("--queries", required=True, help="JSONL with {\"query\": ...} lines")
    p.add_argument("--out", required=True, help="output JSONL")
    p.add_argument("--strict", action="store_true", help="propagate dead prefixes")
    _add_decode_flags(p)
    p.set_defaults(func=cmd_decode)

    defaults = SyntheticSpec()
    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    p.add_argument("--out-records", required=True)
    p.add_argument("--out-ecpm", required=True)
    p.add_argument("--vocab-size", type=int, default=defaults.vocab_size)
    p.add_argument("--queries", type=int, default=defaults.n_queries)
    p.add_argument("--bidwords-per-query", type=int, default=defaults.bidwords_per_query)
    p.add_argument("--ecpm-dist", choices=["lognormal", "uniform"], default=defaults.ecpm_distribution)
    p.add_argument("--ecpm-params", type=float, nargs=2, default=list(defaults.ecpm_params))
    p.add_argument("--words-per-topic", type=int, default=defaults.words_per_topic)
    p.add_argument("--bidword-length", type=int, default=defaults.bidword_length)
    p.add_argument("--pool-per-topic", type=int, default=defaults.pool_per_topic)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("eval", help="evaluate a decode run against a corpus")
    p.add_argument("--run", required=True, help="decode output JSONL")
    p.add_argument("--records", required=True, help="JSONL log records (clicks)")
    p.add_argument("--ecpm", required=True, help="JSON bidword -> value map")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--per-query-csv", dest="per_query_csv", help="optional per-query CSV")
    p.add_argument("--ks", type=int, nargs="+", default=[10, 50])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("theta-sweep", help="run all standard depth schedules on a corpus")
    p.add_argument("--records", required=True)
    p.add_argument("--ecpm", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--eval-queries", dest="eval_queries", type=int, default=200)
    p.add_argument("--k", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--value-temperature", dest="value_temperature", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_theta_sweep)

    p = sub.add_parser("wdpo-demo", help="train the softmax-policy alignment demo")
    p.add_argument("--candidates", help="JSON map bidword -> value (built-in default)")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional JSON summary path")
    p.set_defaults(func=cmd_wdpo_demo)

    p = sub.add_parser("sample-pairs", help="export preference pairs from a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample_pairs)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("VALUEDEC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, TsvFormatError, TokenizationError, ValueError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
