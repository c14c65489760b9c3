"""Aggregation of per-token log-probabilities into one confidence value.

Three strategies:

* ``equal``: plain product of token probabilities, exp(sum log p_i).
  Simple but fragile: one low-probability token collapses the score.
* ``positional``: weighted product exp(sum w_i log p_i) with a quadratic
  weight profile w_i = max(0, -k*(i - peak)^2 + c) over 1-based token
  positions, emphasizing mid-answer tokens.  Probability scale.
* ``semantic_anchor``: mean log-probability over information-bearing
  tokens only, selected by an idf threshold (low-idf tokens are treated
  as stopwords).  Logprob scale.

All operations are pure; `IdfTable` is immutable after construction.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, RecordParseError
from .jsonl import read_jsonl, write_jsonl
from .teacher import TokenLogProbSequence
from .text import tokenize

SCALE_PROBABILITY = "probability"
SCALE_LOGPROB = "logprob"

# Smallest positive subnormal float: guards exp() underflow so the
# probability-scale invariant value > 0 survives pathological inputs.
_MIN_POS = 5e-324


class FallbackWarning(RuntimeWarning):
    """A degenerate weight/mask forced a fallback aggregation."""


@dataclass(frozen=True)
class ConfidenceValue:
    value: float
    scale: str

    def __post_init__(self) -> None:
        if self.scale == SCALE_PROBABILITY:
            if not 0.0 < self.value <= 1.0:
                raise InvalidInputError(
                    f"probability-scale confidence must be in (0, 1], got {self.value!r}"
                )
        elif self.scale == SCALE_LOGPROB:
            if self.value > 0.0:
                raise InvalidInputError(
                    f"logprob-scale confidence must be <= 0, got {self.value!r}"
                )
        else:
            raise InvalidInputError(f"unknown confidence scale {self.scale!r}")


class IdfTable:
    """term -> idf mapping; unknown terms resolve to the table maximum."""

    def __init__(self, idf: dict[str, float], corpus_doc_count: int):
        if corpus_doc_count < 1:
            raise InvalidInputError("corpus_doc_count must be >= 1")
        for term, value in idf.items():
            if value < 0.0 or not math.isfinite(value):
                raise InvalidInputError(f"idf({term!r}) = {value!r} must be finite and >= 0")
        self._idf = dict(idf)
        self.corpus_doc_count = int(corpus_doc_count)
        self._max_idf = max(self._idf.values()) if self._idf else 0.0

    def lookup(self, term: str) -> float:
        return self._idf.get(term, self._max_idf)

    @property
    def max_idf(self) -> float:
        return self._max_idf

    def __len__(self) -> int:
        return len(self._idf)

    def __contains__(self, term: str) -> bool:
        return term in self._idf

    def items(self):
        return self._idf.items()

    def save(self, path: str | os.PathLike) -> None:
        header = {"corpus_doc_count": self.corpus_doc_count}
        rows = ({"term": t, "idf": v} for t, v in sorted(self._idf.items()))
        write_jsonl(path, [header, *rows])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "IdfTable":
        header: dict | None = None
        idf: dict[str, float] = {}
        for line_no, rec in read_jsonl(path):
            if header is None:
                if "corpus_doc_count" not in rec:
                    raise RecordParseError(
                        "first record must carry corpus_doc_count", path=str(path), line=line_no
                    )
                header = rec
                continue
            if "term" not in rec or "idf" not in rec:
                raise RecordParseError("expected {term, idf} record", path=str(path), line=line_no)
            idf[str(rec["term"])] = float(rec["idf"])
        if header is None:
            raise RecordParseError("empty idf table file", path=str(path), line=0)
        return cls(idf, int(header["corpus_doc_count"]))


def build_idf_table(corpus: Sequence[str] | Iterable[str]) -> IdfTable:
    """Smoothed idf over a document corpus: idf(t) = ln((1+N) / (1+df(t))).

    Deterministic and independent of document order.  A term present in
    every document gets idf 0 (stopword under any positive threshold).
    """
    docs = list(corpus)
    if not docs:
        raise InvalidInputError("corpus must be nonempty")
    n = len(docs)
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(tokenize(doc)):
            df[term] = df.get(term, 0) + 1
    idf = {term: math.log((1.0 + n) / (1.0 + count)) for term, count in df.items()}
    return IdfTable(idf, corpus_doc_count=n)


def semantic_mask(tokens: Sequence[str], idf: IdfTable, tau_freq: float) -> np.ndarray:
    """Binary anchor mask: 1 iff idf(token) > tau_freq."""
    if len(tokens) == 0:
        raise InvalidInputError("token sequence must be nonempty")
    return np.array([1 if idf.lookup(t) > tau_freq else 0 for t in tokens], dtype=np.int64)


@dataclass(frozen=True)
class ConfidenceStrategy:
    """Which aggregation to use and its parameters.

    positional: k > 0 (attenuation steepness), c > 0 (maximum weight),
    peak >= 1 (position of maximum importance).  `peak_mode="midpoint"`
    overrides the fixed peak with n/2 per sequence.  `normalize_weights`
    divides by sum(w); off by default, the weighted product is used
    unnormalized as defined.

    semantic_anchor: requires an `IdfTable`; tokens with idf > tau_freq
    are the anchors.
    """

    kind: str = "positional"
    k: float = 0.2
    c: float = 1.5
    peak: float = 5.0
    peak_mode: str = "fixed"  # "fixed" | "midpoint"
    normalize_weights: bool = False
    tau_freq: float = 0.15
    idf: IdfTable | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("equal", "positional", "semantic_anchor"):
            raise InvalidInputError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "positional":
            if self.k <= 0 or self.c <= 0:
                raise InvalidInputError("positional strategy requires k > 0 and c > 0")
            if self.peak_mode not in ("fixed", "midpoint"):
                raise InvalidInputError(f"unknown peak_mode {self.peak_mode!r}")
            if self.peak_mode == "fixed" and self.peak < 1:
                raise InvalidInputError("fixed peak must be >= 1")
        if self.kind == "semantic_anchor":
            if self.idf is None:
                raise InvalidInputError("semantic_anchor strategy requires an IdfTable")
            if self.tau_freq < 0:
                raise InvalidInputError("tau_freq must be >= 0")


def positional_weights(n: int, k: float, c: float, peak: float) -> np.ndarray:
    """Quadratic weight profile over 1-based positions 1..n.

    w_i = max(0, -k*(i - peak)^2 + c); symmetric about `peak`, maximum c
    at the peak, zero outside |i - peak| >= sqrt(c/k).
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if k <= 0 or c <= 0:
        raise InvalidInputError(f"require k > 0 and c > 0, got k={k}, c={c}")
    i = np.arange(1, n + 1, dtype=np.float64)
    return np.maximum(0.0, -k * (i - peak) ** 2 + c)


def weighted_confidence(seq: TokenLogProbSequence, weights: np.ndarray) -> ConfidenceValue:
    """exp(sum w_i * log p_i) on the probability scale.

    All-ones weights reproduce the equal-weight product exactly.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(seq),):
        raise InvalidInputError(f"weights shape {w.shape} does not match {len(seq)} tokens")
    if np.any(w < 0):
        raise InvalidInputError("weights must be >= 0")
    logp = np.asarray(seq.logprobs, dtype=np.float64)
    value = math.exp(float(np.dot(w, logp)))
    return ConfidenceValue(value=max(value, _MIN_POS), scale=SCALE_PROBABILITY)


def anchored_mean_logprob(seq: TokenLogProbSequence, mask: np.ndarray) -> ConfidenceValue:
    """Mean log-probability over mask=1 tokens, on the logprob scale."""
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (len(seq),):
        raise InvalidInputError(f"mask shape {m.shape} does not match {len(seq)} tokens")
    total = float(m.sum())
    if total <= 0:
        raise InvalidInputError("mask selects no tokens")
    logp = np.asarray(seq.logprobs, dtype=np.float64)
    # sum-then-divide matches np.mean bit for bit when the mask is all ones
    value = float(np.sum(m * logp) / total)
    return ConfidenceValue(value=min(value, 0.0), scale=SCALE_LOGPROB)


def confidence(seq: TokenLogProbSequence, strategy: ConfidenceStrategy) -> ConfidenceValue:
    """Aggregate a token log-prob sequence under the given strategy.

    Degenerate cases fall back with a `FallbackWarning` instead of failing:
    an all-zero positional weight vector (answer shorter than the quadratic
    support) falls back to equal weighting, and an all-zero anchor mask
    falls back to the mean over all tokens.
    """
    n = len(seq)
    if strategy.kind == "equal":
        return weighted_confidence(seq, np.ones(n))

    if strategy.kind == "positional":
        peak = n / 2.0 if strategy.peak_mode == "midpoint" else strategy.peak
        w = positional_weights(n, strategy.k, strategy.c, peak)
        total = float(w.sum())
        if total == 0.0:
            warnings.warn(
                f"positional weights are all zero for {n} tokens "
                f"(k={strategy.k}, c={strategy.c}, peak={peak}); "
                "falling back to equal weighting",
                FallbackWarning,
                stacklevel=2,
            )
            w = np.ones(n)
        elif strategy.normalize_weights:
            w = w / total
        return weighted_confidence(seq, w)

    # semantic_anchor; strategy validation guarantees an idf table
    assert strategy.idf is not None
    mask = semantic_mask(seq.tokens, strategy.idf, strategy.tau_freq)
    if int(mask.sum()) == 0:
        warnings.warn(
            f"anchor mask is all zero for tokens {seq.tokens!r} "
            f"(tau_freq={strategy.tau_freq}); falling back to mean over all tokens",
            FallbackWarning,
            stacklevel=2,
        )
        mask = np.ones(len(seq), dtype=np.int64)
    return anchored_mean_logprob(seq, mask)
