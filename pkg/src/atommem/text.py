"""Tokenization shared by the lexical index, the embedder and token accounting."""

from __future__ import annotations

import re
from typing import Callable

# 50 words; fixed so lexical scores are reproducible across releases.
STOPWORDS = frozenset(
    """
    a an the and or but if of at by for with about to from in on into
    is are was were be been am do does did i me my you your he she it
    we they this that these those what which who as so s t not
    """.split()
)
assert len(STOPWORDS) == 50

_SPLIT = re.compile(r"[^0-9a-z]+")

Tokenizer = Callable[[str], int]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop stopwords. No stemming."""
    return [tok for tok in _SPLIT.split(text.lower()) if tok and tok not in STOPWORDS]


def raw_tokens(text: str) -> list[str]:
    """Like :func:`tokenize` but keeps stopwords."""
    return [tok for tok in _SPLIT.split(text.lower()) if tok]


def whitespace_count(text: str) -> int:
    """Default token counter for context budgets and token cost."""
    return len(text.split())


def content_key(text: str) -> str:
    """Normalized form used for duplicate detection: lowercased, whitespace collapsed."""
    return " ".join(text.lower().split())
