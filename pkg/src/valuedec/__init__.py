"""Value-aware constrained decoding over a weighted bidword vocabulary.

The package stores a fixed bidword vocabulary in a prefix tree whose nodes
carry economic value aggregates, and fuses any next-token probability source
with those aggregates at decode time to produce top-K candidates that are
both in-vocabulary and high-value.  It also ships the supporting pipeline:
moving-average value updates, preference-pair alignment with a value-aware
loss weight, dataset filtering and synthetic corpora, and an offline metric
suite.
"""

__version__ = "0.1.0"

from .align import (
    PairLogProbs,
    PreferencePair,
    normalized_ecpm,
    sample_pairs,
    wdpo_demo,
    wdpo_loss,
    wdpo_loss_grad,
    wdpo_weight,
)
from .dataset import (
    BagOfTokensEmbedder,
    BidwordImpression,
    Embedder,
    LogRecord,
    SyntheticSpec,
    extract_pairs,
    filter_relevant,
    format_sft_tasks,
    gen_synthetic,
    relevance,
    truncate_by_value,
)
from .decoder import (
    Candidate,
    DeadPrefixError,
    DecodeConfig,
    DecodeError,
    STANDARD_SCHEDULES,
    ThetaSchedule,
    ValueMix,
    adjusted_distribution,
    decode_topk,
    node_value,
    sample_one,
    theta_at_depth,
)
from .metrics import (
    EvaluationReport,
    evaluate,
    hitrate_at_k,
    mean_ecpm,
    oovr,
    spearman_rho,
)
from .scorer import (
    NgramScorer,
    TableScorer,
    TokenScorer,
    UniformScorer,
    fit_ngram,
    perplexity,
    table_scorer,
    uniform_scorer,
)
from .tokenizer import TokenizationError, Tokenizer
from .trie import (
    BidwordEntry,
    ChildrenView,
    TrieFormatError,
    TsvFormatError,
    UpdateParams,
    WeightedTrie,
    WeightedTrieNode,
    build_trie,
    read_bidword_tsv,
)

__all__ = [
    "BagOfTokensEmbedder",
    "BidwordEntry",
    "BidwordImpression",
    "Candidate",
    "ChildrenView",
    "DeadPrefixError",
    "DecodeConfig",
    "DecodeError",
    "Embedder",
    "EvaluationReport",
    "LogRecord",
    "NgramScorer",
    "PairLogProbs",
    "PreferencePair",
    "STANDARD_SCHEDULES",
    "SyntheticSpec",
    "TableScorer",
    "ThetaSchedule",
    "TokenizationError",
    "Tokenizer",
    "TokenScorer",
    "TrieFormatError",
    "TsvFormatError",
    "UniformScorer",
    "UpdateParams",
    "ValueMix",
    "WeightedTrie",
    "WeightedTrieNode",
    "adjusted_distribution",
    "build_trie",
    "decode_topk",
    "evaluate",
    "extract_pairs",
    "filter_relevant",
    "fit_ngram",
    "format_sft_tasks",
    "gen_synthetic",
    "hitrate_at_k",
    "mean_ecpm",
    "node_value",
    "normalized_ecpm",
    "oovr",
    "perplexity",
    "read_bidword_tsv",
    "relevance",
    "sample_one",
    "sample_pairs",
    "spearman_rho",
    "table_scorer",
    "theta_at_depth",
    "truncate_by_value",
    "uniform_scorer",
    "wdpo_demo",
    "wdpo_loss",
    "wdpo_loss_grad",
    "wdpo_weight",
]
