"""Deterministic whitespace tokenizer shared by the mock teacher, idf
tables, and the featurizer.

Lowercase, split on whitespace, strip leading/trailing punctuation from
each piece, drop pieces that end up empty.  Internal punctuation
(apostrophes, hyphens) is preserved.
"""

from __future__ import annotations

import string

_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    out = []
    for piece in text.lower().split():
        piece = piece.strip(_PUNCT)
        if piece:
            out.append(piece)
    return out
