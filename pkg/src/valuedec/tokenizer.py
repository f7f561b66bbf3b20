"""Whitespace tokenizer with character fallback and a persisted vocabulary.

Token ids must stay stable across the trie, the scorers, and any saved
artifacts, so the vocabulary is an explicit, persisted list: one token per
line, id = line index.  Id 0 is always the end-of-sequence marker.

Encoding splits on whitespace; a word missing from the vocabulary falls back
to its characters, with continuation characters stored under a ``##`` prefix
so decoding can rejoin them without spaces.  ``decode(encode(s))`` recovers
``s`` up to whitespace normalization.
"""

from __future__ import annotations

import os
from typing import IO, Iterable, Sequence

EOS_TOKEN = "</s>"
_CONTINUATION = "##"


class TokenizationError(Exception):
    """Raised when text contains a piece absent from the vocabulary."""


class Tokenizer:
    def __init__(self, tokens: Sequence[str]):
        if not tokens or tokens[0] != EOS_TOKEN:
            raise ValueError(f"token 0 must be {EOS_TOKEN!r}")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        for tok in self._tokens:
            if not tok or "\n" in tok or (tok != EOS_TOKEN and tok.split() != [tok]):
                raise ValueError(f"invalid vocabulary token {tok!r}")

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    @property
    def eos_id(self) -> int:
        return 0

    def token_string(self, token_id: int) -> str:
        return self._tokens[token_id]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Tokenizer":
        """Collect a vocabulary from a corpus, in first-appearance order.

        Every word is added whole, and its characters are added in both plain
        and continuation form so later out-of-vocabulary words can fall back.
        """
        tokens = [EOS_TOKEN]
        seen = {EOS_TOKEN}
        def add(tok: str) -> None:
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
        for text in texts:
            for word in text.split():
                add(word)
                add(word[0])
                for ch in word[1:]:
                    add(ch)
                    add(_CONTINUATION + ch)
                add(_CONTINUATION + word[0])
        return cls(tokens)

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        lookup = self._ids
        for word in text.split():
            word_id = lookup.get(word)
            if word_id is not None:
                ids.append(word_id)
                continue
            for pos, ch in enumerate(word):
                piece = ch if pos == 0 else _CONTINUATION + ch
                piece_id = lookup.get(piece)
                if piece_id is None:
                    raise TokenizationError(
                        f"piece {piece!r} of word {word!r} is not in the vocabulary"
                    )
                ids.append(piece_id)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        parts: list[str] = []
        for token_id in ids:
            if token_id == 0:
                continue
            tok = self._tokens[token_id]
            if tok.startswith(_CONTINUATION):
                if not parts:
                    raise ValueError("continuation token at start of sequence")
                parts[-1] += tok[len(_CONTINUATION):]
            else:
                parts.append(tok)
        return " ".join(parts)

    def save(self, sink: str | os.PathLike[str] | IO[str]) -> None:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "w", encoding="utf-8") as handle:
                self.save(handle)
            return
        for tok in self._tokens:
            sink.write(tok + "\n")

    @classmethod
    def load(cls, source: str | os.PathLike[str] | IO[str]) -> "Tokenizer":
        if isinstance(source, (str, os.PathLike)):
            with open(source, "r", encoding="utf-8") as handle:
                return cls.load(handle)
        return cls([line.rstrip("\n") for line in source if line.rstrip("\n")])
