"""Value-weighted preference alignment.

Builds preference pairs from per-query candidate values (keeping only pairs
whose value gap clears a threshold), and scores them with a pairwise
preference loss whose per-sample weight shrinks as the policy's pairwise
odds drift from the value-implied target split.  The weight is

    w = exp(-KL(normalize(p_w, p_l) || (P_w, P_l)))

with (P_w, P_l) the pair's values normalized to sum to one; w is treated as
a constant during optimization.  A small softmax-policy demo shows the loss
driving a candidate ranking into value order.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger("valuedec.align")

DEFAULT_BETA = 0.1


@dataclass(frozen=True)
class PreferencePair:
    """A (winner, loser) bidword pair for one query; winner has higher value."""

    query: str
    y_w: tuple[int, ...] | str
    y_l: tuple[int, ...] | str
    ecpm_w: float
    ecpm_l: float

    def __post_init__(self) -> None:
        if not self.ecpm_w > self.ecpm_l:
            raise ValueError("winner must carry the strictly higher value")


@dataclass(frozen=True)
class PairLogProbs:
    """Sequence log-probabilities of a pair under the policy and reference."""

    logp_theta_w: float
    logp_theta_l: float
    logp_ref_w: float
    logp_ref_l: float

    def __post_init__(self) -> None:
        for name in ("logp_theta_w", "logp_theta_l", "logp_ref_w", "logp_ref_l"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def sample_pairs(
    candidates_by_query: Mapping[str, Mapping[str, float]],
    tau: float,
    count: int,
    seed: int,
) -> list[PreferencePair]:
    """Sample ``count`` preference pairs per query, uniformly over admissible pairs.

    A pair is admissible when its value gap strictly exceeds ``tau``; the
    higher-value member becomes the winner.  Queries with no admissible pair
    are skipped with a warning.  Sampling is with replacement and
    deterministic under ``seed``.
    """
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    pairs: list[PreferencePair] = []
    for query in sorted(candidates_by_query):
        values = candidates_by_query[query]
        items = sorted(values.items())
        admissible = [
            (a, ea, b, eb) if ea > eb else (b, eb, a, ea)
            for i, (a, ea) in enumerate(items)
            for b, eb in items[i + 1:]
            if abs(ea - eb) > tau
        ]
        if not admissible:
            logger.warning("query %r has no candidate pair with value gap > %g", query, tau)
            continue
        for idx in rng.integers(0, len(admissible), size=count):
            winner, ecpm_w, loser, ecpm_l = admissible[idx]
            pairs.append(PreferencePair(query, winner, loser, ecpm_w, ecpm_l))
    return pairs


def normalized_ecpm(ecpm_w: float, ecpm_l: float) -> tuple[float, float]:
    """Normalize a value pair to a two-point distribution."""
    if ecpm_w < 0.0 or ecpm_l < 0.0:
        raise ValueError("values must be non-negative")
    total = ecpm_w + ecpm_l
    if total <= 0.0:
        raise ValueError("cannot normalize a pair of zero values")
    return ecpm_w / total, ecpm_l / total


def wdpo_weight(p_theta_w: float, p_theta_l: float, target_w: float, target_l: float) -> float:
    """Confidence weight in (0, 1]; 1 exactly when the policy pair matches the target.

    The policy pair is normalized over the two candidates, and the weight is
    ``exp(-KL(policy || target))``.  A zero target with positive policy mass
    clamps the weight to 0 with a warning.
    """
    if p_theta_w <= 0.0 or p_theta_l <= 0.0:
        raise ValueError("policy probabilities must be positive")
    total = p_theta_w + p_theta_l
    q = (p_theta_w / total, p_theta_l / total)
    targets = (target_w, target_l)
    kl = 0.0
    for q_i, p_i in zip(q, targets):
        if q_i == 0.0:
            continue
        if p_i <= 0.0:
            logger.warning("zero target probability with policy mass %g; weight clamped to 0", q_i)
            return 0.0
        kl += q_i * (math.log(q_i) - math.log(p_i))
    return min(1.0, math.exp(-max(kl, 0.0)))


def _log_sigmoid(x: float) -> float:
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def margin(lp: PairLogProbs) -> float:
    """Policy-vs-reference log-ratio margin between winner and loser."""
    return (lp.logp_theta_w - lp.logp_ref_w) - (lp.logp_theta_l - lp.logp_ref_l)


def wdpo_loss(lp: PairLogProbs, beta: float = DEFAULT_BETA, weight: float = 1.0) -> float:
    """Weighted pairwise preference loss: ``-log sigmoid(beta * margin) * weight``.

    With ``weight = 1`` this is the plain pairwise preference loss.  The
    log-sigmoid is computed in log space, so extreme margins stay finite.
    """
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    if not 0.0 < weight <= 1.0:
        raise ValueError("weight must lie in (0, 1]")
    return -_log_sigmoid(beta * margin(lp)) * weight


def wdpo_loss_grad(
    lp: PairLogProbs, beta: float = DEFAULT_BETA, weight: float = 1.0
) -> tuple[float, PairLogProbs]:
    """Loss plus its analytic gradient w.r.t. each of the four log-probabilities.

    The gradient is ``-weight * beta * sigmoid(-beta * margin)`` on the policy
    winner, mirrored with opposite signs on the other three slots; ``weight``
    is a constant, no gradient flows through it.
    """
    loss = wdpo_loss(lp, beta, weight)
    g = -weight * beta * _sigmoid(-beta * margin(lp))
    grads = PairLogProbs(
        logp_theta_w=g,
        logp_theta_l=-g,
        logp_ref_w=-g,
        logp_ref_l=g,
    )
    return loss, grads


# ----------------------------------------------------------------------
# softmax-policy demo
# ----------------------------------------------------------------------


@dataclass
class DemoResult:
    """Outcome of the alignment demo on a fixed candidate set."""

    candidates: list[str]
    ecpm: dict[str, float]
    logits: np.ndarray
    loss_trace: list[float]

    def ranking(self) -> list[str]:
        order = np.lexsort((np.array(self.candidates), -self.logits))
        return [self.candidates[i] for i in order]

    def probabilities(self) -> dict[str, float]:
        z = self.logits - self.logits.max()
        p = np.exp(z)
        p /= p.sum()
        return {c: float(p[i]) for i, c in enumerate(self.candidates)}


def wdpo_demo(
    candidates: Mapping[str, float],
    steps: int = 2000,
    learning_rate: float = 0.5,
    beta: float = DEFAULT_BETA,
    seed: int = 0,
    tau: float = 0.0,
    use_weight: bool = True,
) -> DemoResult:
    """Train a softmax policy over a candidate set to rank it by value.

    The policy is a logit per candidate; the reference is the frozen initial
    (uniform) policy.  Each step samples one admissible pair and takes a
    gradient step on the weighted pairwise loss.  Needs at least two
    candidates with distinct values.
    """
    names = sorted(candidates)
    if len(names) < 2 or len({candidates[n] for n in names}) < 2:
        raise ValueError("demo needs at least two candidates with distinct values")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    index = {name: i for i, name in enumerate(names)}
    n = len(names)
    logits = np.zeros(n)
    ref_logp = np.full(n, -math.log(n))  # frozen uniform reference

    admissible = [
        (a, b) if candidates[a] > candidates[b] else (b, a)
        for i, a in enumerate(names)
        for b in names[i + 1:]
        if abs(candidates[a] - candidates[b]) > tau
    ]
    if not admissible:
        raise ValueError(f"no candidate pair has value gap > {tau}")

    loss_trace: list[float] = []
    for _ in range(steps):
        winner, loser = admissible[int(rng.integers(0, len(admissible)))]
        iw, il = index[winner], index[loser]
        z = logits - logits.max()
        p = np.exp(z)
        p /= p.sum()
        logp = np.log(p)
        lp = PairLogProbs(
            logp_theta_w=float(logp[iw]),
            logp_theta_l=float(logp[il]),
            logp_ref_w=float(ref_logp[iw]),
            logp_ref_l=float(ref_logp[il]),
        )
        if use_weight:
            target_w, target_l = normalized_ecpm(candidates[winner], candidates[loser])
            weight = wdpo_weight(float(p[iw]), float(p[il]), target_w, target_l)
            weight = max(weight, 1e-12)
        else:
            weight = 1.0
        loss, grads = wdpo_loss_grad(lp, beta, weight)
        loss_trace.append(loss)
        # d logp[i] / d logits = e_i - p
        grad_logits = grads.logp_theta_w * (_one_hot(iw, n) - p)
        grad_logits += grads.logp_theta_l * (_one_hot(il, n) - p)
        logits -= learning_rate * grad_logits
    return DemoResult(names, dict(candidates), logits, loss_trace)


def _one_hot(i: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


# ----------------------------------------------------------------------
# pair dataset export
# ----------------------------------------------------------------------


def write_pairs_jsonl(
    pairs: Iterable[PreferencePair], sink: str | os.PathLike[str] | IO[str]
) -> int:
    """Export pairs for external trainers; returns the record count."""
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as handle:
            return write_pairs_jsonl(pairs, handle)
    count = 0
    for pair in pairs:
        record = {
            "query": pair.query,
            "chosen": list(pair.y_w) if isinstance(pair.y_w, tuple) else pair.y_w,
            "rejected": list(pair.y_l) if isinstance(pair.y_l, tuple) else pair.y_l,
            "ecpm_chosen": pair.ecpm_w,
            "ecpm_rejected": pair.ecpm_l,
        }
        sink.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        count += 1
    return count
