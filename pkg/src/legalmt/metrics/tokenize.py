"""Language-agnostic tokenizer shared by every metric."""

from __future__ import annotations

import unicodedata
from functools import lru_cache

TOKENIZER_TAG = "ws+punct-v1"
DANDAS = {"।", "॥"}  # । ॥


@lru_cache(maxsize=4096)
def is_punct(ch: str) -> bool:
    return ch in DANDAS or unicodedata.category(ch).startswith("P")


def mt_tokenize(text: str) -> list[str]:
    """Whitespace split, then every punctuation character becomes its own token.

    >>> mt_tokenize("a, b.")
    ['a', ',', 'b', '.']
    """
    tokens = []
    for chunk in text.split():
        buf = []
        for ch in chunk:
            if is_punct(ch):
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(ch)
            else:
                buf.append(ch)
        if buf:
            tokens.append("".join(buf))
    return tokens


@lru_cache(maxsize=4096)
def _is_latin(ch: str) -> bool:
    return unicodedata.name(ch, "").startswith("LATIN")


def lower_latin(token: str) -> str:
    """Lowercase Latin letters only; other scripts pass through untouched."""
    if token.isascii():
        return token.lower()
    return "".join(c.lower() if _is_latin(c) else c for c in token)
