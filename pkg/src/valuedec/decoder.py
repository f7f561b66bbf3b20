"""Value-aware constrained decoding over a weighted trie.

At every generation step the trie restricts the candidate set to the
children of the current prefix (plus a virtual end-of-word symbol when the
prefix is itself a stored bidword).  Each candidate's trie value — a mix of
its subtree mean and max — is softmax-normalized across the step's
candidates and used to tilt the scorer's probabilities:

    p(k) ∝ p_scorer(k) * (1 + v̂(k) * theta(depth))

followed by renormalization.  ``theta`` grows with depth under the
non-trivial schedules, so early steps stay close to the scorer (relevance)
while later steps increasingly favor valuable branches.  Every emitted
candidate is a complete stored bidword by construction; the end-of-word
symbol draws its scorer mass from the end-of-sequence token.

Decoding is pure with respect to the trie snapshot and the scorer; any
number of decodes may run in parallel against the same trie.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .scorer import TokenScorer, validate_distribution
from .trie import WeightedTrie, WeightedTrieNode

SMOOTHING_FLOOR = 1e-12
_SAMPLE_RETRY_BUDGET = 32


class DecodeError(Exception):
    """Raised for unusable decode inputs (empty trie, vocabulary mismatch)."""


class DeadPrefixError(DecodeError):
    """All scorer mass on the surviving candidate set is zero."""


# ----------------------------------------------------------------------
# depth schedules
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaSchedule:
    """Depth-indexed weight on the value signal, one value per depth d >= 1.

    Kinds: ``zero`` (no value influence), ``constant`` c, ``linear``
    (step * d), ``exponential`` (scale * base**(d-1)), and ``custom`` (an
    explicit list, clamped to its last element past the end).
    """

    kind: str
    params: tuple[float, ...] = ()

    _KINDS = ("zero", "constant", "linear", "exponential", "custom")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        arity = {"zero": 0, "constant": 1, "linear": 1, "exponential": 2}
        if self.kind in arity and len(self.params) != arity[self.kind]:
            raise ValueError(f"{self.kind} schedule takes {arity[self.kind]} parameter(s)")
        if any(not math.isfinite(p) for p in self.params):
            raise ValueError("schedule parameters must be finite")
        if self.kind in ("constant", "linear") and self.params[0] < 0.0:
            raise ValueError("schedule must be non-negative at every depth")
        if self.kind == "exponential" and (self.params[0] <= 0.0 or self.params[1] < 0.0):
            raise ValueError("exponential schedule needs base > 0 and scale >= 0")
        if self.kind == "custom":
            if not self.params:
                raise ValueError("custom schedule needs at least one value")
            if any(v < 0.0 for v in self.params):
                raise ValueError("schedule must be non-negative at every depth")

    @classmethod
    def zero(cls) -> "ThetaSchedule":
        return cls("zero")

    @classmethod
    def constant(cls, c: float) -> "ThetaSchedule":
        return cls("constant", (float(c),))

    @classmethod
    def linear(cls, step: float) -> "ThetaSchedule":
        return cls("linear", (float(step),))

    @classmethod
    def exponential(cls, base: float, scale: float) -> "ThetaSchedule":
        return cls("exponential", (float(base), float(scale)))

    @classmethod
    def custom(cls, values: Sequence[float]) -> "ThetaSchedule":
        return cls("custom", tuple(float(v) for v in values))

    def at(self, depth: int) -> float:
        if depth < 1:
            raise ValueError("depth is 1-indexed")
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "linear":
            return self.params[0] * depth
        if self.kind == "exponential":
            base, scale = self.params
            return scale * base ** (depth - 1)
        return self.params[min(depth, len(self.params)) - 1]

    def spec_string(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "constant":
            return f"const:{self.params[0]:g}"
        if self.kind == "linear":
            return f"linear:{self.params[0]:g}"
        if self.kind == "exponential":
            return f"exp:{self.params[0]:g},{self.params[1]:g}"
        return "custom:" + ",".join(f"{v:g}" for v in self.params)

    @classmethod
    def parse(cls, spec: str) -> "ThetaSchedule":
        """Parse ``zero | const:C | linear:S | exp:B,S | custom:v1,v2,...``."""
        spec = spec.strip()
        if spec == "zero":
            return cls.zero()
        try:
            kind, _, arg = spec.partition(":")
            if kind == "const":
                return cls.constant(float(arg))
            if kind == "linear":
                return cls.linear(float(arg))
            if kind == "exp":
                base, scale = (float(v) for v in arg.split(","))
                return cls.exponential(base, scale)
            if kind == "custom":
                return cls.custom([float(v) for v in arg.split(",")])
        except ValueError as exc:
            raise ValueError(f"bad schedule spec {spec!r}: {exc}") from None
        raise ValueError(f"bad schedule spec {spec!r}")


def theta_at_depth(schedule: ThetaSchedule, depth: int) -> float:
    return schedule.at(depth)


# The sweep experiment runs these five, ordered from value-off to the
# steepest exponential ramp.
STANDARD_SCHEDULES: tuple[tuple[str, ThetaSchedule], ...] = (
    ("zero", ThetaSchedule.zero()),
    ("const1", ThetaSchedule.constant(1.0)),
    ("linear1", ThetaSchedule.linear(1.0)),
    ("exp2", ThetaSchedule.exponential(2.0, 1.0)),
    ("exp2x2", ThetaSchedule.exponential(2.0, 2.0)),
)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ValueMix:
    """Weights on the (mean, max) aggregates when scoring a branch."""

    alpha_v: float = 0.5
    beta_v: float = 0.5

    def __post_init__(self) -> None:
        if self.alpha_v < 0.0 or self.beta_v < 0.0:
            raise ValueError("mix weights must be non-negative")
        if self.alpha_v + self.beta_v <= 0.0:
            raise ValueError("mix weights must not both be zero")


@dataclass(frozen=True)
class DecodeConfig:
    k: int = 10
    beam_width: int = 32
    mode: str = "beam"  # greedy | beam | sample
    seed: int = 0
    max_depth: int = 256
    theta: ThetaSchedule = field(default_factory=ThetaSchedule.zero)
    value_mix: ValueMix = field(default_factory=ValueMix)
    # Temperature for the value softmax; raw values collapse to near one-hot
    # when their spread is large, so corpora with wide value ranges may want
    # a temperature near the value scale.
    value_temperature: float = 1.0
    # Strict mode propagates dead prefixes instead of smoothing over them.
    strict: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.mode not in ("greedy", "beam", "sample"):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.mode == "beam" and self.beam_width < self.k:
            raise ValueError("beam mode requires beam_width >= k")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.value_temperature <= 0.0:
            raise ValueError("value_temperature must be positive")

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "beam_width": self.beam_width,
            "mode": self.mode,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "theta": self.theta.spec_string(),
            "alpha_v": self.value_mix.alpha_v,
            "beta_v": self.value_mix.beta_v,
            "value_temperature": self.value_temperature,
            "strict": self.strict,
        }

    @classmethod
    def from_json_dict(cls, raw: Mapping) -> "DecodeConfig":
        cfg = cls()
        mix = ValueMix(
            float(raw.get("alpha_v", cfg.value_mix.alpha_v)),
            float(raw.get("beta_v", cfg.value_mix.beta_v)),
        )
        theta = raw.get("theta", cfg.theta.spec_string())
        if isinstance(theta, str):
            theta = ThetaSchedule.parse(theta)
        return cls(
            k=int(raw.get("k", cfg.k)),
            beam_width=int(raw.get("beam_width", cfg.beam_width)),
            mode=str(raw.get("mode", cfg.mode)),
            seed=int(raw.get("seed", cfg.seed)),
            max_depth=int(raw.get("max_depth", cfg.max_depth)),
            theta=theta,
            value_mix=mix,
            value_temperature=float(raw.get("value_temperature", cfg.value_temperature)),
            strict=bool(raw.get("strict", cfg.strict)),
        )

    @classmethod
    def from_json_file(cls, path: str) -> "DecodeConfig":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json_dict(json.load(handle))


@dataclass(frozen=True)
class Candidate:
    """One decoded bidword with its scores and terminal value."""

    tokens: tuple[int, ...]
    log_prob_llm: float
    log_score_adjusted: float
    word_value: float


# ----------------------------------------------------------------------
# single-step reweighting
# ----------------------------------------------------------------------


def node_value(mean_k: float, max_k: float, mix: ValueMix) -> float:
    """Scalar branch value: ``alpha_v * mean + beta_v * max``."""
    if mean_k < 0.0 or max_k < 0.0:
        raise ValueError("aggregates must be non-negative")
    return mix.alpha_v * mean_k + mix.beta_v * max_k


def _softmax(values: np.ndarray, temperature: float) -> np.ndarray:
    scaled = values / temperature
    scaled -= scaled.max()
    exp = np.exp(scaled)
    return exp / exp.sum()


def _adjusted_arrays(
    p_llm: np.ndarray,
    tokens: np.ndarray,
    raw_values: np.ndarray,
    theta_d: float,
    temperature: float,
    p_floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Core reweighting over an aligned (tokens, values) candidate set.

    Returns (adjusted probabilities, raw scorer probabilities), both aligned
    with ``tokens``.  Raises :class:`DeadPrefixError` when the surviving
    scorer mass is zero and no floor is in effect.
    """
    p_sel = p_llm[tokens]
    if p_floor > 0.0:
        p_sel = np.maximum(p_sel, p_floor)
    elif not p_sel.any():
        raise DeadPrefixError("scorer assigns zero mass to every legal candidate")
    v_hat = _softmax(raw_values, temperature)
    weighted = p_sel * (1.0 + v_hat * theta_d)
    return weighted / weighted.sum(), p_llm[tokens]


def adjusted_distribution(
    p_llm: np.ndarray,
    children: Mapping[int, tuple[float, float]],
    word_value: float | None,
    eos_id: int,
    theta_d: float,
    mix: ValueMix,
    *,
    temperature: float = 1.0,
    p_floor: float = 0.0,
) -> dict[int, float]:
    """Mask a scorer distribution to the trie candidates and tilt it by value.

    The candidate set is the ``children`` key set plus, when ``word_value``
    is present, the end-of-word symbol reported under ``eos_id`` (whose
    scorer mass is read at the end-of-sequence token and whose value is the
    terminal value itself).  Values are softmax-normalized across the
    candidate set, each scorer probability is multiplied by
    ``1 + v_hat * theta_d``, and the result is renormalized.  All other
    tokens get probability zero and are omitted from the returned map.
    """
    if theta_d < 0.0:
        raise ValueError("theta_d must be non-negative")
    if not children and word_value is None:
        raise ValueError("empty candidate set: no children and no terminal")
    if eos_id in children:
        raise DecodeError(f"end-of-sequence id {eos_id} collides with a trie edge")
    p_llm = validate_distribution(p_llm, len(p_llm))
    tokens = list(children.keys())
    values = [node_value(m, x, mix) for m, x in children.values()]
    if word_value is not None:
        tokens.append(eos_id)
        values.append(node_value(word_value, word_value, mix))
    probs, _ = _adjusted_arrays(
        p_llm,
        np.asarray(tokens, dtype=np.intp),
        np.asarray(values, dtype=np.float64),
        theta_d,
        temperature,
        p_floor,
    )
    return {int(t): float(p) for t, p in zip(tokens, probs)}


# ----------------------------------------------------------------------
# decoding
# ----------------------------------------------------------------------


def _check_inputs(trie: WeightedTrie, scorer: TokenScorer) -> None:
    if len(trie) == 0:
        raise DecodeError("cannot decode against an empty trie")
    if trie.max_token_id >= scorer.vocabulary_size:
        raise DecodeError(
            f"trie token id {trie.max_token_id} outside scorer vocabulary "
            f"of size {scorer.vocabulary_size}"
        )
    if not 0 <= scorer.end_of_sequence < scorer.vocabulary_size:
        raise DecodeError("scorer end_of_sequence outside its own vocabulary")


def _step_candidates(
    node: WeightedTrieNode, eos_id: int, mix: ValueMix
) -> tuple[np.ndarray, np.ndarray]:
    tokens = list(node.children.keys())
    values = [
        mix.alpha_v * c.mean + mix.beta_v * c.max for c in node.children.values()
    ]
    if node.is_word:
        if eos_id in node.children:
            raise DecodeError(f"end-of-sequence id {eos_id} collides with a trie edge")
        tokens.append(eos_id)
        values.append((mix.alpha_v + mix.beta_v) * node.word_value)  # type: ignore[operator]
    return np.asarray(tokens, dtype=np.intp), np.asarray(values, dtype=np.float64)


def _rank_key(candidate: Candidate) -> tuple[float, tuple[int, ...]]:
    return (-candidate.log_score_adjusted, candidate.tokens)


def decode_topk(
    query: str, trie: WeightedTrie, scorer: TokenScorer, config: DecodeConfig
) -> list[Candidate]:
    """Top-K complete bidwords for a query, best adjusted score first.

    Beam mode is the top-K workhorse; greedy follows the single argmax path
    and yields one candidate; sample mode draws ``k`` seeded ancestral
    samples and deduplicates them.  Ties rank by lexicographic token order.
    """
    _check_inputs(trie, scorer)
    if config.mode == "sample":
        rng = np.random.default_rng(config.seed)
        found: dict[tuple[int, ...], Candidate] = {}
        for _ in range(config.k):
            candidate = _sample_path(query, trie, scorer, config, rng)
            found.setdefault(candidate.tokens, candidate)
        return sorted(found.values(), key=_rank_key)
    width = 1 if config.mode == "greedy" else config.beam_width
    return _beam_search(query, trie, scorer, config, width)


def _beam_search(
    query: str,
    trie: WeightedTrie,
    scorer: TokenScorer,
    config: DecodeConfig,
    width: int,
) -> list[Candidate]:
    eos = scorer.end_of_sequence
    mix = config.value_mix
    floor = 0.0 if config.strict else SMOOTHING_FLOOR
    greedy = config.mode == "greedy"
    # beam: (tokens, node, cumulative adjusted log score, cumulative scorer log prob)
    beams: list[tuple[tuple[int, ...], WeightedTrieNode, float, float]] = [
        ((), trie.root, 0.0, 0.0)
    ]
    completed: list[Candidate] = []
    depth = 0
    while beams and depth < config.max_depth:
        depth += 1
        theta_d = config.theta.at(depth)
        expansions: list[tuple[float, tuple[int, ...], WeightedTrieNode, float]] = []
        for tokens, node, log_adj, log_llm in beams:
            p_llm = validate_distribution(
                scorer.next_distribution(query, tokens), scorer.vocabulary_size
            )
            step_tokens, step_values = _step_candidates(node, eos, mix)
            try:
                probs, raw = _adjusted_arrays(
                    p_llm, step_tokens, step_values, theta_d,
                    config.value_temperature, floor,
                )
            except DeadPrefixError:
                continue  # strict mode: drop the beam
            if greedy:
                order = [int(np.lexsort((step_tokens, -probs))[0])]
            else:
                order = range(len(step_tokens))
            for idx in order:
                token = int(step_tokens[idx])
                new_adj = log_adj + float(np.log(probs[idx]))
                new_llm = log_llm + float(
                    np.log(raw[idx]) if raw[idx] > 0.0 else -np.inf
                )
                if token == eos and node.is_word:
                    completed.append(
                        Candidate(tokens, new_llm, new_adj, node.word_value)  # type: ignore[arg-type]
                    )
                else:
                    expansions.append(
                        (new_adj, tokens + (token,), node.children[token], new_llm)
                    )
        expansions.sort(key=lambda e: (-e[0], e[1]))
        beams = [
            (tokens, node, log_adj, log_llm)
            for log_adj, tokens, node, log_llm in expansions[:width]
        ]
    if not completed and config.strict:
        raise DeadPrefixError("every beam died before completing a bidword")
    completed.sort(key=_rank_key)
    return completed[: config.k]


def _sample_path(
    query: str,
    trie: WeightedTrie,
    scorer: TokenScorer,
    config: DecodeConfig,
    rng: np.random.Generator,
) -> Candidate:
    eos = scorer.end_of_sequence
    mix = config.value_mix
    for _ in range(_SAMPLE_RETRY_BUDGET):
        tokens: tuple[int, ...] = ()
        node = trie.root
        log_adj = 0.0
        log_llm = 0.0
        dead = False
        for depth in range(1, config.max_depth + 1):
            p_llm = validate_distribution(
                scorer.next_distribution(query, tokens), scorer.vocabulary_size
            )
            step_tokens, step_values = _step_candidates(node, eos, mix)
            try:
                probs, raw = _adjusted_arrays(
                    p_llm, step_tokens, step_values, config.theta.at(depth),
                    config.value_temperature, 0.0,
                )
            except DeadPrefixError:
                dead = True
                break
            idx = int(rng.choice(len(step_tokens), p=probs))
            token = int(step_tokens[idx])
            log_adj += float(np.log(probs[idx]))
            log_llm += float(np.log(raw[idx]) if raw[idx] > 0.0 else -np.inf)
            if token == eos and node.is_word:
                return Candidate(tokens, log_llm, log_adj, node.word_value)  # type: ignore[arg-type]
            tokens += (token,)
            node = node.children[token]
        if not dead:
            raise DecodeError(f"sample exceeded max_depth={config.max_depth}")
    raise DeadPrefixError(
        f"sampling hit a dead prefix {_SAMPLE_RETRY_BUDGET} times in a row"
    )


def sample_one(
    query: str, trie: WeightedTrie, scorer: TokenScorer, config: DecodeConfig
) -> Candidate:
    """Draw one bidword by ancestral sampling; deterministic for a fixed seed.

    Dead prefixes are resampled up to a bounded retry budget, then raised.
    """
    _check_inputs(trie, scorer)
    rng = np.random.default_rng(config.seed)
    return _sample_path(query, trie, scorer, config, rng)


def with_schedule(config: DecodeConfig, theta: ThetaSchedule) -> DecodeConfig:
    return replace(config, theta=theta)
