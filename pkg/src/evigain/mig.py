"""Information-gain scoring of (query, answer, document) triplets.

The gain of a document is the teacher-confidence delta between scoring
the answer with the document in context and without it (the baseline
depends only on the query/answer, so it is computed once per pair and
cached).  Scored triplets are labeled with two thresholds (gain above
b1 is positive, below b2 negative, anything between is neutral and
discarded) and balanced 1:1 by downsampling the majority class.
"""

from __future__ import annotations

import enum
import math
import os
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .confidence import ConfidenceStrategy, ConfidenceValue, confidence
from .errors import (
    EvigainError,
    InvalidInputError,
    RecordParseError,
    ScoringError,
    UnbalanceableDatasetError,
)
from .jsonl import read_jsonl, write_jsonl
from .teacher import TeacherRequest


@dataclass(frozen=True)
class Triplet:
    id: str
    query: str
    answer: str
    document: str
    attachment_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidInputError("triplet id must be nonempty")
        for name in ("query", "answer", "document"):
            if not getattr(self, name):
                raise InvalidInputError(f"triplet {self.id!r}: {name} must be nonempty")


@dataclass(frozen=True)
class ScoredTriplet:
    triplet: Triplet
    conf_with: ConfidenceValue
    conf_without: ConfidenceValue
    mig: float

    def __post_init__(self) -> None:
        if self.conf_with.scale != self.conf_without.scale:
            raise InvalidInputError(
                f"triplet {self.triplet.id!r}: confidence scales differ "
                f"({self.conf_with.scale} vs {self.conf_without.scale})"
            )
        expected = self.conf_with.value - self.conf_without.value
        # exact for internally computed values; tolerance admits hand-rounded files
        if not math.isclose(self.mig, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise InvalidInputError(
                f"triplet {self.triplet.id!r}: mig {self.mig!r} != conf_with - conf_without"
            )


@dataclass(frozen=True)
class LabelingConfig:
    """Strict thresholds: gain > b1 is positive, gain < b2 negative,
    boundary values are neutral."""

    b1: float = 0.2
    b2: float = -0.2

    def __post_init__(self) -> None:
        if not self.b1 > self.b2:
            raise InvalidInputError(f"require b1 > b2, got b1={self.b1}, b2={self.b2}")


class Label(enum.Enum):
    POSITIVE = 1
    NEGATIVE = 0
    NEUTRAL = -1


@dataclass(frozen=True)
class LabeledExample:
    triplet: Triplet
    mig: float
    label: int  # 1 positive, 0 negative

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise InvalidInputError(f"label must be 0 or 1, got {self.label!r}")


class BaselineCache:
    """Thread-safe cache of without-document confidences, keyed by
    (provider identity, strategy, query, answer, attachments): the baseline
    never depends on the document, but it does depend on which teacher
    scored it and how the tokens were aggregated."""

    def __init__(self) -> None:
        self._store: dict[tuple, ConfidenceValue] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._store)

    def get_or_compute(self, key: tuple, compute) -> ConfidenceValue:
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        value = compute()
        with self._lock:
            return self._store.setdefault(key, value)


def compute_mig(
    triplet: Triplet,
    provider,
    strategy: ConfidenceStrategy,
    baseline_cache: BaselineCache | None = None,
) -> ScoredTriplet:
    """Score one triplet: confidence with the document minus without it.

    Both variants use the same strategy, so the scales match by
    construction.  Teacher errors propagate wrapped in a `ScoringError`
    carrying the triplet id.
    """
    req_with = TeacherRequest(
        query=triplet.query,
        answer=triplet.answer,
        document=triplet.document,
        attachment_refs=triplet.attachment_refs,
    )
    req_without = TeacherRequest(
        query=triplet.query,
        answer=triplet.answer,
        document=None,
        attachment_refs=triplet.attachment_refs,
    )

    def _with() -> ConfidenceValue:
        return confidence(provider.logprobs(req_with), strategy)

    def _without() -> ConfidenceValue:
        return confidence(provider.logprobs(req_without), strategy)

    try:
        conf_with = _with()
        if baseline_cache is not None:
            hasher = getattr(provider, "config_hash", None)
            provider_key = hasher() if callable(hasher) else id(provider)
            key = (provider_key, strategy, triplet.query, triplet.answer,
                   triplet.attachment_refs)
            conf_without = baseline_cache.get_or_compute(key, _without)
        else:
            conf_without = _without()
    except EvigainError as e:
        raise ScoringError(triplet.id, str(e)) from e

    if conf_with.scale != conf_without.scale:  # defensive; same strategy implies same scale
        raise ScoringError(
            triplet.id, f"scale mismatch: {conf_with.scale} vs {conf_without.scale}"
        )
    return ScoredTriplet(
        triplet=triplet,
        conf_with=conf_with,
        conf_without=conf_without,
        mig=conf_with.value - conf_without.value,
    )


def score_from_sequences(
    triplet: Triplet,
    seq_with,
    seq_without,
    strategy: ConfidenceStrategy,
) -> ScoredTriplet:
    """Score a triplet from precomputed logprob sequences (no teacher call)."""
    try:
        conf_with = confidence(seq_with, strategy)
        conf_without = confidence(seq_without, strategy)
    except EvigainError as e:
        raise ScoringError(triplet.id, str(e)) from e
    return ScoredTriplet(
        triplet=triplet,
        conf_with=conf_with,
        conf_without=conf_without,
        mig=conf_with.value - conf_without.value,
    )


def label(scored: ScoredTriplet | float, cfg: LabelingConfig) -> Label:
    """Total over the reals; boundary values land on NEUTRAL."""
    mig = scored.mig if isinstance(scored, ScoredTriplet) else float(scored)
    if mig > cfg.b1:
        return Label.POSITIVE
    if mig < cfg.b2:
        return Label.NEGATIVE
    return Label.NEUTRAL


@dataclass(frozen=True)
class DatasetStats:
    positives: int
    negatives: int
    discarded: int
    histogram: tuple[tuple[float, int], ...]  # (bin start, count), bins of mig values


def mig_histogram(migs: Iterable[float], bin_width: float = 0.05) -> tuple[tuple[float, int], ...]:
    if bin_width <= 0:
        raise InvalidInputError("bin_width must be > 0")
    counts: Counter[int] = Counter()
    for m in migs:
        counts[int(np.floor(m / bin_width))] += 1
    # bin starts rounded so that e.g. -7 * 0.05 prints as -0.35
    return tuple((round(k * bin_width, 12), counts[k]) for k in sorted(counts))


def dataset_stats(
    dataset: Iterable[LabeledExample],
    discarded: int = 0,
    bin_width: float = 0.05,
) -> DatasetStats:
    examples = list(dataset)
    positives = sum(1 for e in examples if e.label == 1)
    negatives = len(examples) - positives
    return DatasetStats(
        positives=positives,
        negatives=negatives,
        discarded=discarded,
        histogram=mig_histogram((e.mig for e in examples), bin_width=bin_width),
    )


def build_dataset(
    scored: Iterable[ScoredTriplet],
    cfg: LabelingConfig,
    seed: int,
    balance: bool = True,
) -> tuple[list[LabeledExample], DatasetStats]:
    """Label a scored stream, discard neutrals, balance classes 1:1.

    The majority class is downsampled uniformly without replacement with
    the given seed; output is sorted by triplet id, so identical inputs
    and seed yield an identical example sequence.  Raises
    `UnbalanceableDatasetError` when either class is empty.
    """
    positives: list[LabeledExample] = []
    negatives: list[LabeledExample] = []
    discarded = 0
    empty = True
    for st in scored:
        empty = False
        cls = label(st, cfg)
        if cls is Label.POSITIVE:
            positives.append(LabeledExample(triplet=st.triplet, mig=st.mig, label=1))
        elif cls is Label.NEGATIVE:
            negatives.append(LabeledExample(triplet=st.triplet, mig=st.mig, label=0))
        else:
            discarded += 1
    if empty:
        raise InvalidInputError("scored stream is empty")

    positives.sort(key=lambda e: e.triplet.id)
    negatives.sort(key=lambda e: e.triplet.id)

    if balance:
        if not positives or not negatives:
            raise UnbalanceableDatasetError(len(positives), len(negatives), discarded)
        target = min(len(positives), len(negatives))
        rng = np.random.default_rng(seed)
        if len(positives) > target:
            keep = sorted(rng.choice(len(positives), size=target, replace=False))
            positives = [positives[i] for i in keep]
        if len(negatives) > target:
            keep = sorted(rng.choice(len(negatives), size=target, replace=False))
            negatives = [negatives[i] for i in keep]
    elif not positives and not negatives:
        raise UnbalanceableDatasetError(0, 0, discarded)

    dataset = sorted(positives + negatives, key=lambda e: e.triplet.id)
    stats = dataset_stats(dataset, discarded=discarded)
    return dataset, stats


# ---------------------------------------------------------------------------
# JSONL schemas


def triplet_to_dict(t: Triplet) -> dict:
    return {
        "id": t.id,
        "query": t.query,
        "answer": t.answer,
        "document": t.document,
        "attachments": list(t.attachment_refs),
    }


def triplet_from_dict(rec: dict) -> Triplet:
    return Triplet(
        id=str(rec["id"]),
        query=str(rec["query"]),
        answer=str(rec["answer"]),
        document=str(rec["document"]),
        attachment_refs=tuple(str(a) for a in rec.get("attachments", [])),
    )


def load_triplets(path: str | os.PathLike) -> list[Triplet]:
    triplets = []
    seen: set[str] = set()
    for line_no, rec in read_jsonl(path):
        for key in ("id", "query", "answer", "document"):
            if key not in rec:
                raise RecordParseError(f"missing key {key!r}", path=str(path), line=line_no)
        t = triplet_from_dict(rec)
        if t.id in seen:
            raise RecordParseError(f"duplicate triplet id {t.id!r}", path=str(path), line=line_no)
        seen.add(t.id)
        triplets.append(t)
    return triplets


def scored_to_dict(st: ScoredTriplet) -> dict:
    rec = triplet_to_dict(st.triplet)
    rec.update(
        conf_with=st.conf_with.value,
        conf_without=st.conf_without.value,
        scale=st.conf_with.scale,
        mig=st.mig,
    )
    return rec


def scored_from_dict(rec: dict) -> ScoredTriplet:
    scale = str(rec["scale"])
    return ScoredTriplet(
        triplet=triplet_from_dict(rec),
        conf_with=ConfidenceValue(value=float(rec["conf_with"]), scale=scale),
        conf_without=ConfidenceValue(value=float(rec["conf_without"]), scale=scale),
        mig=float(rec["mig"]),
    )


def load_scored(path: str | os.PathLike) -> list[ScoredTriplet]:
    out = []
    for line_no, rec in read_jsonl(path):
        for key in ("id", "query", "answer", "document", "conf_with", "conf_without", "scale", "mig"):
            if key not in rec:
                raise RecordParseError(f"missing key {key!r}", path=str(path), line=line_no)
        out.append(scored_from_dict(rec))
    return out


def save_scored(path: str | os.PathLike, scored: Iterable[ScoredTriplet]) -> int:
    return write_jsonl(path, (scored_to_dict(st) for st in scored))


def labeled_to_dict(e: LabeledExample) -> dict:
    rec = triplet_to_dict(e.triplet)
    rec.update(mig=e.mig, label=e.label)
    return rec


def labeled_from_dict(rec: dict) -> LabeledExample:
    return LabeledExample(
        triplet=triplet_from_dict(rec), mig=float(rec["mig"]), label=int(rec["label"])
    )


def load_labeled(path: str | os.PathLike) -> list[LabeledExample]:
    out = []
    for line_no, rec in read_jsonl(path):
        for key in ("id", "query", "answer", "document", "mig", "label"):
            if key not in rec:
                raise RecordParseError(f"missing key {key!r}", path=str(path), line=line_no)
        out.append(labeled_from_dict(rec))
    return out


def save_labeled(path: str | os.PathLike, dataset: Iterable[LabeledExample]) -> int:
    return write_jsonl(path, (labeled_to_dict(e) for e in dataset))
