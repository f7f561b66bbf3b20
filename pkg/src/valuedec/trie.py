"""Weighted prefix tree over token-id sequences.

Every stored sequence (a "bidword") carries a non-negative value in eCPM
units.  Each node keeps two aggregates over the subtree below it:

* ``mean`` — the unweighted arithmetic mean of its children's means,
* ``max``  — the maximum of its children's maxima.

A terminal node contributes its own stored value to both aggregates as a
pseudo-child, so a bidword that is a strict prefix of another keeps its
value alive.  Terminals hold two slots: ``word_value`` is refreshed by an
exponential moving average as new values arrive, while ``word_value_max``
is a running maximum that never decays.  Aggregates are what the decoder
reads when steering generation toward high-value branches.

Thread contract: any number of concurrent readers OR one exclusive writer.
All mutating methods serialize on an internal lock; readers that need a
stable view across many calls should take ``snapshot()`` and read that.
"""

from __future__ import annotations

import logging
import math
import os
import struct
import threading
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

logger = logging.getLogger("valuedec.trie")

_MAGIC = b"WTRIE"
_FORMAT_VERSION = 1

_HEADER = struct.Struct("<5sB")
_FLAGS = struct.Struct("<B")
_F64 = struct.Struct("<d")
_F64_PAIR = struct.Struct("<dd")
_U32 = struct.Struct("<I")

_FLAG_IS_WORD = 0x01


class TrieFormatError(Exception):
    """Raised when a serialized trie has a bad magic, version, or layout."""


class TsvFormatError(Exception):
    """Raised in strict mode when a bidword TSV line cannot be parsed."""


@dataclass(frozen=True)
class BidwordEntry:
    """One (token sequence, value) record for trie construction.

    ``text`` is the original surface string, kept for reporting only; it is
    never stored in the trie.
    """

    tokens: tuple[int, ...]
    ecpm: float
    text: str = ""


@dataclass(frozen=True)
class UpdateParams:
    """Moving-average rates for value refreshes; must sum to one.

    ``alpha_u`` weights the incoming value, ``beta_u`` the stored one.
    """

    alpha_u: float
    beta_u: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha_u <= 1.0 and 0.0 <= self.beta_u <= 1.0):
            raise ValueError("alpha_u and beta_u must lie in [0, 1]")
        if abs(self.alpha_u + self.beta_u - 1.0) > 1e-9:
            raise ValueError("alpha_u + beta_u must equal 1")


class ChildrenView(NamedTuple):
    """Child aggregates under a prefix, plus the prefix's own terminal value."""

    children: dict[int, tuple[float, float]]
    word_value: float | None


class WeightedTrieNode:
    __slots__ = ("children", "mean", "max", "is_word", "word_value", "word_value_max")

    def __init__(self) -> None:
        self.children: dict[int, WeightedTrieNode] = {}
        self.mean = 0.0
        self.max = 0.0
        self.is_word = False
        self.word_value: float | None = None
        self.word_value_max: float | None = None

    def refresh(self) -> None:
        """Recompute this node's aggregates from its children and terminal slots."""
        total = 0.0
        count = 0
        mx = -1.0
        for child in self.children.values():
            total += child.mean
            count += 1
            if child.max > mx:
                mx = child.max
        if self.is_word:
            total += self.word_value  # type: ignore[operator]
            count += 1
            if self.word_value_max > mx:  # type: ignore[operator]
                mx = self.word_value_max  # type: ignore[assignment]
        self.mean = total / count if count else 0.0
        self.max = mx if mx >= 0.0 else 0.0


def _check_value(ecpm: float) -> float:
    ecpm = float(ecpm)
    if not math.isfinite(ecpm) or ecpm < 0.0:
        raise ValueError(f"value must be finite and non-negative, got {ecpm!r}")
    return ecpm


class WeightedTrie:
    """Mutable weighted trie; see the module docstring for semantics."""

    def __init__(self) -> None:
        self.root = WeightedTrieNode()
        self._n_words = 0
        self._max_token = -1
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._n_words

    @property
    def max_token_id(self) -> int:
        """Largest token id on any edge, or -1 for an empty trie."""
        return self._max_token

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def node_at(self, prefix: Sequence[int]) -> WeightedTrieNode | None:
        node = self.root
        for token in prefix:
            node = node.children.get(token)  # type: ignore[assignment]
            if node is None:
                return None
        return node

    def contains(self, tokens: Sequence[int]) -> bool:
        node = self.node_at(tokens)
        return node is not None and node.is_word

    def children_values(self, prefix: Sequence[int]) -> ChildrenView:
        """Aggregates of the children under ``prefix``.

        An absent prefix yields an empty view; that is a valid result, not an
        error.
        """
        node = self.root
        try:
            for token in prefix:
                node = node.children[token]
        except KeyError:
            return ChildrenView({}, None)
        children = {t: (c.mean, c.max) for t, c in node.children.items()}
        return ChildrenView(children, node.word_value if node.is_word else None)

    def iter_bidwords(self) -> Iterator[tuple[tuple[int, ...], float, float]]:
        """Yield (tokens, word_value, word_value_max) for every stored bidword."""
        stack: list[tuple[tuple[int, ...], WeightedTrieNode]] = [((), self.root)]
        while stack:
            prefix, node = stack.pop()
            if node.is_word:
                yield prefix, node.word_value, node.word_value_max  # type: ignore[misc]
            for token in sorted(node.children, reverse=True):
                stack.append((prefix + (token,), node.children[token]))

    def iter_nodes(self) -> Iterator[tuple[tuple[int, ...], WeightedTrieNode]]:
        stack: list[tuple[tuple[int, ...], WeightedTrieNode]] = [((), self.root)]
        while stack:
            prefix, node = stack.pop()
            yield prefix, node
            for token in sorted(node.children, reverse=True):
                stack.append((prefix + (token,), node.children[token]))

    def node_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children.values())
        return count

    def depth_histogram(self) -> dict[int, int]:
        """Bidword count per token length."""
        hist: dict[int, int] = {}
        for tokens, _, _ in self.iter_bidwords():
            hist[len(tokens)] = hist.get(len(tokens), 0) + 1
        return dict(sorted(hist.items()))

    # ------------------------------------------------------------------
    # mutation
    # ------------------------------------------------------------------

    def momentum_update(
        self, tokens: Sequence[int], ecpm_new: float, params: UpdateParams
    ) -> None:
        """Fold a fresh value into the bidword at ``tokens``.

        An existing terminal blends ``word_value`` by the moving average and
        raises ``word_value_max`` to the running maximum; an absent bidword is
        inserted with both slots set to the new value.  Aggregates along the
        root path are then recomputed, each node from its own children.
        """
        if not tokens:
            raise ValueError("token sequence must be non-empty")
        ecpm_new = _check_value(ecpm_new)
        with self._lock:
            path = [self.root]
            node = self.root
            for token in tokens:
                child = node.children.get(token)
                if child is None:
                    child = WeightedTrieNode()
                    node.children[token] = child
                    if token > self._max_token:
                        self._max_token = int(token)
                node = child
                path.append(node)
            if node.is_word:
                node.word_value = params.alpha_u * ecpm_new + params.beta_u * node.word_value
                if ecpm_new > node.word_value_max:  # type: ignore[operator]
                    node.word_value_max = ecpm_new
            else:
                node.is_word = True
                node.word_value = ecpm_new
                node.word_value_max = ecpm_new
                self._n_words += 1
            for ancestor in reversed(path):
                ancestor.refresh()

    def remove_bidword(self, tokens: Sequence[int]) -> bool:
        """Delete a stored bidword; returns whether it existed.

        Nodes left childless and non-terminal are pruned, and aggregates on
        the surviving path are recomputed.
        """
        with self._lock:
            path = [self.root]
            node = self.root
            for token in tokens:
                child = node.children.get(token)
                if child is None:
                    return False
                node = child
                path.append(node)
            if not node.is_word:
                return False
            node.is_word = False
            node.word_value = None
            node.word_value_max = None
            self._n_words -= 1
            # Prune upward: path[i] is the child of path[i-1] via tokens[i-1].
            for i in range(len(path) - 1, 0, -1):
                current = path[i]
                if current.children or current.is_word:
                    break
                del path[i - 1].children[tokens[i - 1]]
                path.pop()
            for ancestor in reversed(path):
                ancestor.refresh()
            return True

    def recompute_aggregates(self) -> None:
        """Full bottom-up aggregation pass over every node.

        Idempotent; running it twice changes nothing.  Mutating operations
        keep aggregates current on their own, so this is only needed after
        bulk editing of nodes.
        """
        with self._lock:
            self._recompute_all()

    def _recompute_all(self) -> None:
        # Children always precede their parent in reversed pre-order.
        order: list[WeightedTrieNode] = []
        append = order.append
        stack = [self.root]
        while stack:
            node = stack.pop()
            append(node)
            stack.extend(node.children.values())
        for node in reversed(order):
            node.refresh()

    def snapshot(self) -> WeightedTrie:
        """Structural copy safe to read while this trie keeps mutating."""
        with self._lock:
            copy = WeightedTrie()
            copy._n_words = self._n_words
            copy._max_token = self._max_token
            stack = [(self.root, copy.root)]
            while stack:
                src, dst = stack.pop()
                dst.mean = src.mean
                dst.max = src.max
                dst.is_word = src.is_word
                dst.word_value = src.word_value
                dst.word_value_max = src.word_value_max
                for token, child in src.children.items():
                    twin = WeightedTrieNode()
                    dst.children[token] = twin
                    stack.append((child, twin))
            return copy

    # ------------------------------------------------------------------
    # comparison and persistence
    # ------------------------------------------------------------------

    def structurally_equal(self, other: WeightedTrie, *, rel_tol: float = 0.0) -> bool:
        """True when both tries have identical shape, flags, and values.

        With ``rel_tol`` zero the comparison is bit-exact; otherwise floats
        may differ by the given relative tolerance.
        """

        def close(a: float | None, b: float | None) -> bool:
            if a is None or b is None:
                return a is b
            if rel_tol == 0.0:
                return a == b
            return math.isclose(a, b, rel_tol=rel_tol, abs_tol=rel_tol)

        stack = [(self.root, other.root)]
        while stack:
            mine, theirs = stack.pop()
            if mine.is_word != theirs.is_word:
                return False
            if not (
                close(mine.mean, theirs.mean)
                and close(mine.max, theirs.max)
                and close(mine.word_value, theirs.word_value)
                and close(mine.word_value_max, theirs.word_value_max)
            ):
                return False
            if mine.children.keys() != theirs.children.keys():
                return False
            for token, child in mine.children.items():
                stack.append((child, theirs.children[token]))
        return True

    def save(self, sink: str | os.PathLike[str] | IO[bytes]) -> None:
        """Write the versioned binary form; see README for the exact layout."""
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "wb") as handle:
                self.save(handle)
            return
        write = sink.write
        write(_HEADER.pack(_MAGIC, _FORMAT_VERSION))
        with self._lock:
            stack: list[tuple[int | None, WeightedTrieNode]] = [(None, self.root)]
            while stack:
                token, node = stack.pop()
                if token is not None:
                    write(_U32.pack(token))
                flags = _FLAG_IS_WORD if node.is_word else 0
                write(_FLAGS.pack(flags))
                if node.is_word:
                    write(_F64_PAIR.pack(node.word_value, node.word_value_max))
                write(_F64_PAIR.pack(node.mean, node.max))
                write(_U32.pack(len(node.children)))
                for child_token in sorted(node.children, reverse=True):
                    stack.append((child_token, node.children[child_token]))
        sink.flush()

    @classmethod
    def load(cls, source: str | os.PathLike[str] | IO[bytes]) -> WeightedTrie:
        if isinstance(source, (str, os.PathLike)):
            with open(source, "rb") as handle:
                return cls.load(handle)
        data = source.read()
        if len(data) < _HEADER.size:
            raise TrieFormatError("truncated stream: missing header")
        magic, version = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise TrieFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        if version != _FORMAT_VERSION:
            raise TrieFormatError(f"unsupported format version {version}")
        trie = cls()
        offset = _HEADER.size

        def take(s: struct.Struct) -> tuple:
            nonlocal offset
            if offset + s.size > len(data):
                raise TrieFormatError("truncated stream")
            values = s.unpack_from(data, offset)
            offset += s.size
            return values

        def read_record(node: WeightedTrieNode) -> int:
            (flags,) = take(_FLAGS)
            if flags & ~_FLAG_IS_WORD:
                raise TrieFormatError(f"unknown node flags 0x{flags:02x}")
            if flags & _FLAG_IS_WORD:
                node.is_word = True
                node.word_value, node.word_value_max = take(_F64_PAIR)
                trie._n_words += 1
            node.mean, node.max = take(_F64_PAIR)
            (n_children,) = take(_U32)
            return n_children

        remaining = read_record(trie.root)
        stack = [(trie.root, remaining)]
        while stack:
            parent, pending = stack[-1]
            if pending == 0:
                stack.pop()
                continue
            stack[-1] = (parent, pending - 1)
            (token,) = take(_U32)
            child = WeightedTrieNode()
            parent.children[token] = child
            if token > trie._max_token:
                trie._max_token = int(token)
            stack.append((child, read_record(child)))
        if offset != len(data):
            raise TrieFormatError(f"{len(data) - offset} trailing bytes after trie")
        return trie


def build_trie(entries: Iterable[BidwordEntry]) -> WeightedTrie:
    """Build a trie from (tokens, value) entries and aggregate bottom-up.

    Duplicate token sequences keep the last entry's value.  Raises
    ``ValueError`` for an empty entry list, an empty token sequence, or a
    negative / non-finite value.
    """
    trie = WeightedTrie()
    root = trie.root
    max_token = -1
    n_words = 0
    seen_any = False
    for entry in entries:
        seen_any = True
        tokens = entry.tokens
        if not tokens:
            raise ValueError(f"entry {entry.text!r} has an empty token sequence")
        ecpm = _check_value(entry.ecpm)
        node = root
        for token in tokens:
            child = node.children.get(token)
            if child is None:
                child = WeightedTrieNode()
                node.children[token] = child
                if token > max_token:
                    max_token = int(token)
            node = child
        if not node.is_word:
            node.is_word = True
            n_words += 1
        node.word_value = ecpm
        node.word_value_max = ecpm
    if not seen_any:
        raise ValueError("cannot build a trie from an empty entry list")
    trie._max_token = max_token
    trie._n_words = n_words
    trie._recompute_all()
    return trie


def read_bidword_tsv(
    source: str | os.PathLike[str] | IO[str], *, strict: bool = True
) -> list[tuple[str, float]]:
    """Parse ``bidword<TAB>ecpm`` lines into (text, value) pairs.

    Malformed lines raise :class:`TsvFormatError` with their line number in
    strict mode and are skipped with a logged warning otherwise.  Blank lines
    are ignored in both modes.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as handle:
            return read_bidword_tsv(handle, strict=strict)
    rows: list[tuple[str, float]] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        problem = None
        fields = line.split("\t")
        if len(fields) != 2:
            problem = f"expected 2 tab-separated fields, got {len(fields)}"
        else:
            text, ecpm_str = fields
            if not text.strip():
                problem = "empty bidword"
            else:
                try:
                    ecpm = float(ecpm_str)
                except ValueError:
                    problem = f"bad ecpm value {ecpm_str!r}"
                else:
                    if not math.isfinite(ecpm) or ecpm < 0.0:
                        problem = f"ecpm must be finite and non-negative, got {ecpm_str}"
        if problem is not None:
            if strict:
                raise TsvFormatError(f"line {lineno}: {problem}")
            logger.warning("skipping malformed TSV line %d: %s", lineno, problem)
            continue
        rows.append((text.strip(), ecpm))
    return rows
