"""Retrieve -> rerank -> context assembly, plus ranking-quality metrics.

The initial retriever is tf-idf cosine over the corpus (any retriever
producing the same ordered-candidates contract can replace it).  The
reranker rescores the candidates and the top-k survivors are concatenated
into a prompt; generation itself is out of scope, so the assembled
context is the boundary, ready to pipe into any external generator.

Ties everywhere break by ascending document id, which makes the whole
pipeline deterministic for a fixed corpus, query, model, and config.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .confidence import IdfTable, build_idf_table
from .errors import InvalidInputError, NoEvaluablePairsError, RecordParseError
from .jsonl import read_jsonl, write_jsonl
from .mig import ScoredTriplet
from .reranker import RerankerModel, featurize
from .text import tokenize


@dataclass(frozen=True)
class CorpusDoc:
    text: str
    attachment_refs: tuple[str, ...] = ()


class Corpus:
    """Immutable id -> document store with unique ids and nonempty texts."""

    def __init__(self, documents: Mapping[str, CorpusDoc]):
        if not documents:
            raise InvalidInputError("corpus must contain at least one document")
        for doc_id, doc in documents.items():
            if not doc_id:
                raise InvalidInputError("document ids must be nonempty")
            if not doc.text:
                raise InvalidInputError(f"document {doc_id!r} has empty text")
        self._docs = dict(documents)

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def ids(self) -> list[str]:
        return sorted(self._docs)

    def get(self, doc_id: str) -> CorpusDoc:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise InvalidInputError(f"unknown document id {doc_id!r}") from None

    def texts(self) -> list[str]:
        return [self._docs[i].text for i in self.ids()]

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Corpus":
        docs: dict[str, CorpusDoc] = {}
        for line_no, rec in read_jsonl(path):
            for key in ("id", "text"):
                if key not in rec:
                    raise RecordParseError(f"missing key {key!r}", path=str(path), line=line_no)
            doc_id = str(rec["id"])
            if doc_id in docs:
                raise RecordParseError(
                    f"duplicate document id {doc_id!r}", path=str(path), line=line_no
                )
            docs[doc_id] = CorpusDoc(
                text=str(rec["text"]),
                attachment_refs=tuple(str(a) for a in rec.get("attachments", [])),
            )
        return cls(docs)

    def save(self, path: str | os.PathLike) -> int:
        return write_jsonl(
            path,
            (
                {"id": i, "text": self._docs[i].text, "attachments": list(self._docs[i].attachment_refs)}
                for i in self.ids()
            ),
        )


@dataclass(frozen=True)
class RetrievalResult:
    """Candidates ordered by score descending, ties by ascending doc id."""

    ranked: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        ids = [doc_id for doc_id, _ in self.ranked]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("retrieval result contains duplicate ids")
        key = [(-score, doc_id) for doc_id, score in self.ranked]
        if key != sorted(key):
            raise InvalidInputError("retrieval result is not sorted (score desc, id asc)")

    def ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.ranked]

    def __len__(self) -> int:
        return len(self.ranked)


class TfidfIndex:
    """Precomputed idf + document tf-idf weights for repeated queries."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self.idf: IdfTable = build_idf_table(corpus.texts())
        self._doc_vectors: dict[str, dict[str, float]] = {}
        self._doc_norms: dict[str, float] = {}
        for doc_id in corpus.ids():
            vec: dict[str, float] = {}
            for term in tokenize(corpus.get(doc_id).text):
                vec[term] = vec.get(term, 0.0) + 1.0
            for term in vec:
                vec[term] *= self.idf.lookup(term)
            self._doc_vectors[doc_id] = vec
            self._doc_norms[doc_id] = math.sqrt(sum(w * w for w in vec.values()))

    def score(self, query: str, doc_id: str) -> float:
        q_vec: dict[str, float] = {}
        for term in tokenize(query):
            q_vec[term] = q_vec.get(term, 0.0) + 1.0
        for term in q_vec:
            q_vec[term] *= self.idf.lookup(term)
        q_norm = math.sqrt(sum(w * w for w in q_vec.values()))
        d_vec, d_norm = self._doc_vectors[doc_id], self._doc_norms[doc_id]
        if q_norm == 0.0 or d_norm == 0.0:
            return 0.0
        dot = sum(w * d_vec[t] for t, w in q_vec.items() if t in d_vec)
        return dot / (q_norm * d_norm)


def tfidf_retrieve(
    query: str,
    corpus: Corpus,
    m: int,
    index: TfidfIndex | None = None,
) -> RetrievalResult:
    """Top-m documents by tf-idf cosine; zero-score documents still fill
    the candidate list (ordered by id)."""
    if m < 1:
        raise InvalidInputError(f"candidate count m must be >= 1, got {m}")
    if index is None:
        index = TfidfIndex(corpus)
    scored = [(doc_id, index.score(query, doc_id)) for doc_id in corpus.ids()]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return RetrievalResult(ranked=tuple(scored[:m]))


def rerank(
    model: RerankerModel,
    query: str,
    candidates: RetrievalResult,
    corpus: Corpus,
    k: int,
    idf: IdfTable | None = None,
) -> list[tuple[str, float]]:
    """Rescore candidates with the reranker and keep the k best.

    Output ids are a subset of the candidate ids, sorted by score
    descending with ties broken by ascending id; length is
    min(k, len(candidates)).
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    rescored = []
    for doc_id in candidates.ids():
        fv = featurize(query, corpus.get(doc_id).text, idf)
        rescored.append((doc_id, model.score(fv)))
    rescored.sort(key=lambda pair: (-pair[1], pair[0]))
    return rescored[:k]


DEFAULT_CONTEXT_TEMPLATE = "Context:\n{context}\n\nQuestion: {query}\nAnswer:"
DEFAULT_EMPTY_CONTEXT_TEMPLATE = "Question: {query}\nAnswer:"
DEFAULT_BLOCK_TEMPLATE = "[{index}] {text}"
DEFAULT_BLOCK_SEPARATOR = "\n\n"


@dataclass(frozen=True)
class ContextTemplate:
    template: str = DEFAULT_CONTEXT_TEMPLATE
    empty_template: str = DEFAULT_EMPTY_CONTEXT_TEMPLATE
    block_template: str = DEFAULT_BLOCK_TEMPLATE
    block_separator: str = DEFAULT_BLOCK_SEPARATOR


def assemble_context(
    query: str,
    topk_docs: Sequence[tuple[str, str]],
    template: ContextTemplate | None = None,
) -> str:
    """Concatenate top-k documents (id, text), in rerank order, into a
    prompt.  An empty selection produces the query-only prompt."""
    t = template or ContextTemplate()
    if not topk_docs:
        return t.empty_template.format(query=query)
    blocks = [
        t.block_template.format(index=i, doc_id=doc_id, text=text)
        for i, (doc_id, text) in enumerate(topk_docs, start=1)
    ]
    return t.template.format(context=t.block_separator.join(blocks), query=query)


def retrieve_rerank_context(
    model: RerankerModel,
    query: str,
    corpus: Corpus,
    m: int = 20,
    k: int = 3,
    index: TfidfIndex | None = None,
    template: ContextTemplate | None = None,
    idf: IdfTable | None = None,
) -> tuple[list[tuple[str, float]], str]:
    """Full pipeline: candidates, reranked top-k, and the assembled prompt.

    `idf` feeds the reranker's featurizer and must match what the model
    was trained with (None for plain term-frequency features).
    """
    candidates = tfidf_retrieve(query, corpus, m, index=index)
    top = rerank(model, query, candidates, corpus, k, idf=idf)
    prompt = assemble_context(query, [(doc_id, corpus.get(doc_id).text) for doc_id, _ in top], template)
    return top, prompt


# ---------------------------------------------------------------------------
# Ranking-quality evaluation against gain ground truth


@dataclass(frozen=True)
class RankingMetrics:
    pairwise_accuracy: float
    kendall_tau: float
    ndcg: float
    queries: int
    pairs: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.pairwise_accuracy <= 1.0:
            raise InvalidInputError("pairwise accuracy out of [0, 1]")
        if not -1.0 <= self.kendall_tau <= 1.0:
            raise InvalidInputError("kendall tau out of [-1, 1]")
        if not 0.0 <= self.ndcg <= 1.0:
            raise InvalidInputError("ndcg out of [0, 1]")

    def to_dict(self) -> dict:
        return {
            "pairwise_accuracy": self.pairwise_accuracy,
            "kendall_tau": self.kendall_tau,
            "ndcg": self.ndcg,
            "queries": self.queries,
            "pairs": self.pairs,
        }


def group_by_query(scored: Iterable[ScoredTriplet]) -> dict[tuple[str, str], list[ScoredTriplet]]:
    """Group scored triplets into ranking groups keyed by (query, answer)."""
    groups: dict[tuple[str, str], list[ScoredTriplet]] = {}
    for st in scored:
        groups.setdefault((st.triplet.query, st.triplet.answer), []).append(st)
    return groups


def ranking_metrics_from_scores(
    groups: Sequence[tuple[Sequence[float], Sequence[float]]],
    ndcg_k: int = 3,
) -> RankingMetrics:
    """Metrics from (model_scores, gains) pairs, one entry per query group.

    Pairwise accuracy pools over every same-query pair with distinct gains
    (micro average); a score tie on a comparable pair counts as incorrect.
    Kendall tau is computed per query over the same comparable pairs,
    (concordant - discordant) / comparable, and macro-averaged.  NDCG@k
    uses gain = max(0, mig) with log2 discounting; groups with no positive
    gain carry no relevance mass and are skipped.
    """
    correct = 0
    comparable = 0
    taus: list[float] = []
    ndcgs: list[float] = []

    for scores_seq, gains_seq in groups:
        scores = np.asarray(scores_seq, dtype=np.float64)
        gains = np.asarray(gains_seq, dtype=np.float64)
        if scores.shape != gains.shape or scores.ndim != 1:
            raise InvalidInputError("each group needs equal-length score and gain vectors")
        n = scores.size
        if n < 2:
            raise InvalidInputError("each query group must contain at least 2 documents")

        conc = disc = comp = 0
        for a in range(n):
            for b in range(a + 1, n):
                gain_diff = gains[a] - gains[b]
                if gain_diff == 0.0:
                    continue
                comp += 1
                score_diff = scores[a] - scores[b]
                if score_diff * gain_diff > 0.0:
                    conc += 1
                elif score_diff * gain_diff < 0.0:
                    disc += 1
                # score tie: neither concordant nor discordant
        correct += conc
        comparable += comp
        if comp > 0:
            taus.append((conc - disc) / comp)

        rel = np.maximum(0.0, gains)
        if rel.max() > 0.0:
            order = sorted(range(n), key=lambda i: (-scores[i], i))
            ideal = np.sort(rel)[::-1]
            discounts = 1.0 / np.log2(np.arange(2, ndcg_k + 2))
            depth = min(ndcg_k, n)
            dcg = float(np.sum(rel[order[:depth]] * discounts[:depth]))
            idcg = float(np.sum(ideal[:depth] * discounts[:depth]))
            ndcgs.append(dcg / idcg)

    if comparable == 0:
        raise NoEvaluablePairsError("no query group has documents with distinct gains")
    return RankingMetrics(
        pairwise_accuracy=correct / comparable,
        kendall_tau=float(np.mean(taus)),
        ndcg=float(np.mean(ndcgs)) if ndcgs else 0.0,
        queries=len(groups),
        pairs=comparable,
    )


def eval_ranking(
    model: RerankerModel,
    scored: Iterable[ScoredTriplet],
    idf: IdfTable | None = None,
    ndcg_k: int = 3,
) -> RankingMetrics:
    """Score every document with the reranker and compare the induced
    order against the gain ground truth, per query group."""
    groups = group_by_query(scored)
    usable = []
    for (query, _answer), members in sorted(groups.items()):
        if len(members) < 2:
            continue
        scores = [model.score(featurize(query, st.triplet.document, idf)) for st in members]
        gains = [st.mig for st in members]
        usable.append((scores, gains))
    if not usable:
        raise NoEvaluablePairsError("no query group has >= 2 documents")
    return ranking_metrics_from_scores(usable, ndcg_k=ndcg_k)


def per_query_metric_rows(
    model: RerankerModel,
    scored: Iterable[ScoredTriplet],
    idf: IdfTable | None = None,
    ndcg_k: int = 3,
) -> list[dict]:
    """One metrics row per query group (for the CSV report)."""
    rows = []
    for (query, answer), members in sorted(group_by_query(scored).items()):
        if len(members) < 2:
            continue
        scores = [model.score(featurize(query, st.triplet.document, idf)) for st in members]
        gains = [st.mig for st in members]
        try:
            m = ranking_metrics_from_scores([(scores, gains)], ndcg_k=ndcg_k)
        except NoEvaluablePairsError:
            continue
        rows.append(
            {
                "query": query,
                "answer": answer,
                "documents": len(members),
                "pairwise_accuracy": m.pairwise_accuracy,
                "kendall_tau": m.kendall_tau,
                "ndcg": m.ndcg,
            }
        )
    return rows
