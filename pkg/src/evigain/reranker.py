"""Lightweight trainable scorer over (query, document) feature vectors.

The scorer is a linear map or a one-hidden-layer tanh MLP over a small
hand-built feature vector.  Training minimizes a hybrid objective

    L = alpha * L_ce + (1 - alpha) * L_ranknet

where L_ce is the mean binary cross-entropy of per-document helpfulness
and L_ranknet is the summed pairwise logistic loss
log(1 + exp(-sigma * (s_pos - s_neg))) over sampled (positive, negative)
pairs sharing a query.  Gradients are analytic (closed form, no autodiff)
and are verified against central finite differences in the test suite.

Everything stochastic (initialization, epoch shuffling, pair sampling)
is driven by `TrainConfig.seed`, so a rerun reproduces the model bit for
bit (identical serialized content hash).
"""

from __future__ import annotations

import json
import math
import os
import warnings
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InvalidInputError,
    NumericalError,
    SchemaMismatchError,
    TrainingDivergedError,
)
from .jsonl import obj_hash
from .mig import LabeledExample
from .text import tokenize

BUILTIN_SCHEMA = "qd-v1"

PROB_CLAMP = 1e-7

MODEL_FORMAT_VERSION = "1"


# ---------------------------------------------------------------------------
# Features


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_id: str

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise InvalidInputError("feature vector must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("feature values must all be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


def _tf(tokens: Sequence[str]) -> Counter:
    return Counter(tokens)


def tfidf_cosine(query_tokens: Sequence[str], doc_tokens: Sequence[str], idf=None) -> float:
    """Cosine similarity of tf-idf vectors; idf defaults to 1 per term."""
    q, d = _tf(query_tokens), _tf(doc_tokens)
    if not q or not d:
        return 0.0

    def weight(term: str, count: int) -> float:
        w = idf.lookup(term) if idf is not None else 1.0
        return count * w

    qv = {t: weight(t, c) for t, c in q.items()}
    dv = {t: weight(t, c) for t, c in d.items()}
    dot = sum(w * dv[t] for t, w in qv.items() if t in dv)
    qn = math.sqrt(sum(w * w for w in qv.values()))
    dn = math.sqrt(sum(w * w for w in dv.values()))
    if qn == 0.0 or dn == 0.0:
        return 0.0
    return dot / (qn * dn)


def featurize(
    query: str,
    document: str,
    idf=None,
    extra: Sequence[float] | None = None,
) -> FeatureVector:
    """Fixed-order lexical features for a (query, document) pair.

    [tf-idf cosine, token Jaccard, ln(|doc tokens| / |query tokens|),
    fraction of query terms present in doc, 1.0 bias], then any external
    features appended.  Deterministic; raises if either side tokenizes
    to nothing (the log length ratio would not be finite).
    """
    if not query or not document:
        raise InvalidInputError("query and document must be nonempty")
    q_tokens = tokenize(query)
    d_tokens = tokenize(document)
    if not q_tokens:
        raise InvalidInputError(f"query {query!r} has no tokens after tokenization")
    if not d_tokens:
        raise InvalidInputError(f"document has no tokens after tokenization: {document!r}")

    q_set, d_set = set(q_tokens), set(d_tokens)
    union = q_set | d_set
    inter = q_set & d_set
    values = [
        tfidf_cosine(q_tokens, d_tokens, idf),
        len(inter) / len(union),
        math.log(len(d_tokens) / len(q_tokens)),
        len(inter) / len(q_set),
        1.0,
    ]
    schema = BUILTIN_SCHEMA
    if extra is not None:
        ext = [float(x) for x in extra]
        values.extend(ext)
        schema = f"{BUILTIN_SCHEMA}+ext{len(ext)}"
    return FeatureVector(values=np.array(values, dtype=np.float64), schema_id=schema)


def featurize_examples(dataset: Sequence[LabeledExample], idf=None) -> tuple[np.ndarray, str]:
    """Feature matrix (n, dim) for a labeled dataset, plus its schema id."""
    if not dataset:
        raise InvalidInputError("dataset must be nonempty")
    fvs = [featurize(e.triplet.query, e.triplet.document, idf) for e in dataset]
    return np.stack([fv.values for fv in fvs]), fvs[0].schema_id


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.74
    sigma: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    pair_cap_per_query: int = 100
    seed: int = 0
    optimizer: str = "adam"  # "adam" | "sgd"
    architecture: str = "linear"  # "linear" | "mlp"
    hidden_units: int = 8
    pair_policy: str = "label"  # "label" | "mig_ordered"
    mig_margin: float = 0.0  # minimum gain gap for mig_ordered pairs
    ranknet_mean: bool = False  # mean-reduce the pair loss instead of summing

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.sigma <= 0:
            raise InvalidInputError(f"sigma must be > 0, got {self.sigma}")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.pair_cap_per_query < 1:
            raise InvalidInputError("epochs, batch_size, pair_cap_per_query must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.architecture not in ("linear", "mlp"):
            raise InvalidInputError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "mlp" and self.hidden_units < 1:
            raise InvalidInputError("hidden_units must be >= 1")
        if self.pair_policy not in ("label", "mig_ordered"):
            raise InvalidInputError(f"unknown pair_policy {self.pair_policy!r}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "sigma": self.sigma,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "pair_cap_per_query": self.pair_cap_per_query,
            "seed": self.seed,
            "optimizer": self.optimizer,
            "architecture": self.architecture,
            "hidden_units": self.hidden_units,
            "pair_policy": self.pair_policy,
            "mig_margin": self.mig_margin,
            "ranknet_mean": self.ranknet_mean,
        }


@dataclass
class RerankerModel:
    """Scorer with parameters theta.

    linear: s = w . f
    mlp:    s = w2 . tanh(W1 f + b1) + b2
    """

    architecture: str
    schema_id: str
    feature_dim: int
    params: dict[str, np.ndarray]
    version: str = MODEL_FORMAT_VERSION
    hidden_units: int = 0
    train_config: dict | None = None

    def check_schema(self, schema_id: str, dim: int) -> None:
        if schema_id != self.schema_id or dim != self.feature_dim:
            raise SchemaMismatchError(
                f"model expects schema {self.schema_id!r} (dim {self.feature_dim}), "
                f"got {schema_id!r} (dim {dim})"
            )

    def score_matrix(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.ndim == 1:
            f = f[None, :]
        if f.shape[1] != self.feature_dim:
            raise SchemaMismatchError(
                f"feature dim {f.shape[1]} does not match model dim {self.feature_dim}"
            )
        if self.architecture == "linear":
            return f @ self.params["w"]
        h = np.tanh(f @ self.params["W1"].T + self.params["b1"])
        return h @ self.params["w2"] + self.params["b2"]

    def score(self, fv: FeatureVector) -> float:
        self.check_schema(fv.schema_id, len(fv))
        return float(self.score_matrix(fv.values)[0])

    def prob(self, fv: FeatureVector) -> float:
        return float(logistic(np.array([self.score(fv)]))[0])

    def flatten_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_names()])

    def with_flat_params(self, flat: np.ndarray) -> "RerankerModel":
        out: dict[str, np.ndarray] = {}
        pos = 0
        for k in self.param_names():
            shape = self.params[k].shape
            size = self.params[k].size
            out[k] = flat[pos : pos + size].reshape(shape).copy()
            pos += size
        return replace(self, params=out)

    def param_names(self) -> tuple[str, ...]:
        if self.architecture == "linear":
            return ("w",)
        return ("W1", "b1", "w2", "b2")

    # -- serialization ------------------------------------------------------

    def _payload(self) -> dict:
        return {
            "version": self.version,
            "architecture": self.architecture,
            "schema_id": self.schema_id,
            "feature_dim": self.feature_dim,
            "hidden_units": self.hidden_units,
            "parameters": {k: self.params[k].tolist() for k in self.param_names()},
            "train_config": self.train_config,
        }

    def content_hash(self) -> str:
        return obj_hash(self._payload())

    def save(self, path: str | os.PathLike) -> str:
        payload = self._payload()
        h = obj_hash(payload)
        payload["content_hash"] = h
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return h

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RerankerModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        stored_hash = payload.pop("content_hash", None)
        if stored_hash is not None and obj_hash(payload) != stored_hash:
            raise InvalidInputError(f"model file {path} failed its content-hash check")
        params = {
            k: np.asarray(v, dtype=np.float64) for k, v in payload["parameters"].items()
        }
        model = cls(
            architecture=payload["architecture"],
            schema_id=payload["schema_id"],
            feature_dim=int(payload["feature_dim"]),
            params=params,
            version=str(payload["version"]),
            hidden_units=int(payload.get("hidden_units", 0)),
            train_config=payload.get("train_config"),
        )
        model._check_shapes()
        return model

    def _check_shapes(self) -> None:
        d = self.feature_dim
        if self.architecture == "linear":
            if self.params["w"].shape != (d,):
                raise InvalidInputError("linear weight shape does not match feature_dim")
        elif self.architecture == "mlp":
            h = self.hidden_units
            expected = {"W1": (h, d), "b1": (h,), "w2": (h,), "b2": ()}
            for name, shape in expected.items():
                if self.params[name].shape != shape:
                    raise InvalidInputError(
                        f"mlp parameter {name} has shape {self.params[name].shape}, "
                        f"expected {shape}"
                    )
        else:
            raise InvalidInputError(f"unknown architecture {self.architecture!r}")


def init_model(
    architecture: str,
    feature_dim: int,
    schema_id: str = BUILTIN_SCHEMA,
    hidden_units: int = 8,
    seed: int = 0,
) -> RerankerModel:
    """Seeded initialization: weights ~ U(-0.1, 0.1), biases 0."""
    rng = np.random.default_rng(seed)
    if architecture == "linear":
        params = {"w": rng.uniform(-0.1, 0.1, size=feature_dim)}
        hidden_units = 0
    elif architecture == "mlp":
        params = {
            "W1": rng.uniform(-0.1, 0.1, size=(hidden_units, feature_dim)),
            "b1": np.zeros(hidden_units),
            "w2": rng.uniform(-0.1, 0.1, size=hidden_units),
            "b2": np.zeros(()),
        }
    else:
        raise InvalidInputError(f"unknown architecture {architecture!r}")
    return RerankerModel(
        architecture=architecture,
        schema_id=schema_id,
        feature_dim=feature_dim,
        params=params,
        hidden_units=hidden_units,
    )


def logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# Losses


def ce_loss(probs: np.ndarray, labels: np.ndarray, clamp: float = PROB_CLAMP) -> float:
    """Mean binary cross-entropy; probabilities clamped to
    [clamp, 1 - clamp] so the loss stays finite."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise InvalidInputError("empty batch")
    if p.shape != y.shape:
        raise InvalidInputError("probs and labels must have equal length")
    p = np.clip(p, clamp, 1.0 - clamp)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def ranknet_loss(
    score_diffs: np.ndarray,
    sigma: float = 1.0,
    mean_reduction: bool = False,
) -> float:
    """Pairwise logistic loss over score margins s_pos - s_neg.

    Summed over pairs by default; `mean_reduction` averages instead for
    scale comparability with the mean-reduced classification loss.
    """
    d = np.asarray(score_diffs, dtype=np.float64)
    if d.size == 0:
        raise InvalidInputError("empty pair set")
    if sigma <= 0:
        raise InvalidInputError("sigma must be > 0")
    per_pair = np.logaddexp(0.0, -sigma * d)
    return float(np.mean(per_pair)) if mean_reduction else float(np.sum(per_pair))


def hybrid_loss(alpha: float, l_ce: float, l_rank: float) -> float:
    """alpha * l_ce + (1 - alpha) * l_rank; exact component at the endpoints."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 1.0:
        return l_ce
    if alpha == 0.0:
        return l_rank
    return alpha * l_ce + (1.0 - alpha) * l_rank


# ---------------------------------------------------------------------------
# Pair sampling


@dataclass(frozen=True)
class RankPair:
    """Ordered pair of dataset indices sharing a query; `pos_index` is the
    member that should score higher (label 1, or the higher gain under the
    mig_ordered policy)."""

    query_id: str
    pos_index: int
    neg_index: int


def sample_pairs(
    dataset: Sequence[LabeledExample],
    policy: str = "label",
    cap_per_query: int = 100,
    seed: int = 0,
    mig_margin: float = 0.0,
) -> list[RankPair]:
    """Per-query pair construction, capped by seeded uniform sampling.

    "label" pairs every positive with every negative of the same query;
    "mig_ordered" pairs any two same-query examples whose gain gap exceeds
    `mig_margin`.  Queries lacking a class (or any qualifying gap)
    contribute no pairs; an empty result is allowed.
    """
    if policy not in ("label", "mig_ordered"):
        raise InvalidInputError(f"unknown pair policy {policy!r}")
    if cap_per_query < 1:
        raise InvalidInputError("cap_per_query must be >= 1")
    groups: dict[str, list[int]] = {}
    for idx, ex in enumerate(dataset):
        groups.setdefault(ex.triplet.query, []).append(idx)

    rng = np.random.default_rng(seed)
    pairs: list[RankPair] = []
    for query in sorted(groups):
        members = groups[query]
        if policy == "label":
            pos = [i for i in members if dataset[i].label == 1]
            neg = [i for i in members if dataset[i].label == 0]
            candidates = [(i, j) for i in pos for j in neg]
        else:
            candidates = [
                (i, j)
                for i in members
                for j in members
                if dataset[i].mig - dataset[j].mig > mig_margin
            ]
        if not candidates:
            continue
        if len(candidates) > cap_per_query:
            keep = sorted(rng.choice(len(candidates), size=cap_per_query, replace=False))
            candidates = [candidates[k] for k in keep]
        pairs.extend(RankPair(query_id=query, pos_index=i, neg_index=j) for i, j in candidates)
    return pairs


def pair_index_array(pairs: Sequence[RankPair]) -> np.ndarray:
    """(P, 2) int array of (pos_index, neg_index); empty -> shape (0, 2)."""
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array([(p.pos_index, p.neg_index) for p in pairs], dtype=np.int64)


# ---------------------------------------------------------------------------
# Gradients


def hybrid_objective(
    model: RerankerModel,
    features: np.ndarray,
    labels: np.ndarray,
    pairs: np.ndarray,
    cfg: TrainConfig,
) -> float:
    """Hybrid loss of a batch: CE over all given rows, pair loss over
    `pairs` (rows of (pos_index, neg_index) into `features`)."""
    s = model.score_matrix(features)
    l_ce = ce_loss(logistic(s), labels)
    if pairs.shape[0] == 0:
        return hybrid_loss(cfg.alpha, l_ce, 0.0)
    diffs = s[pairs[:, 0]] - s[pairs[:, 1]]
    l_rank = ranknet_loss(diffs, sigma=cfg.sigma, mean_reduction=cfg.ranknet_mean)
    return hybrid_loss(cfg.alpha, l_ce, l_rank)


def hybrid_gradients(
    model: RerankerModel,
    features: np.ndarray,
    labels: np.ndarray,
    pairs: np.ndarray,
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    """Analytic gradient of `hybrid_objective` w.r.t. every parameter.

    Matches central finite differences (step 1e-5) to relative error
    < 1e-4 elementwise; the test suite enforces this on random instances
    for both architectures.  Raises `NumericalError` on non-finite
    gradients, naming the offending parameter.
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = f.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")
    s = model.score_matrix(f)

    # d(hybrid)/d(score) per row
    dl_ds = np.zeros(n)
    if cfg.alpha > 0.0:
        p = logistic(s)
        active = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)  # clamp zeroes the gradient
        dl_ds += cfg.alpha * np.where(active, p - y, 0.0) / n
    if cfg.alpha < 1.0 and pairs.shape[0] > 0:
        diffs = s[pairs[:, 0]] - s[pairs[:, 1]]
        g = cfg.sigma * logistic(-cfg.sigma * diffs)
        if cfg.ranknet_mean:
            g = g / pairs.shape[0]
        coef = 1.0 - cfg.alpha
        np.add.at(dl_ds, pairs[:, 0], -coef * g)
        np.add.at(dl_ds, pairs[:, 1], coef * g)

    if model.architecture == "linear":
        grads = {"w": f.T @ dl_ds}
    else:
        w1, b1 = model.params["W1"], model.params["b1"]
        w2 = model.params["w2"]
        h = np.tanh(f @ w1.T + b1)
        d_pre = (dl_ds[:, None] * w2[None, :]) * (1.0 - h * h)
        grads = {
            "W1": d_pre.T @ f,
            "b1": d_pre.sum(axis=0),
            "w2": h.T @ dl_ds,
            "b2": np.asarray(dl_ds.sum()),
        }

    for name, g_arr in grads.items():
        if not np.all(np.isfinite(g_arr)):
            bad = int(np.flatnonzero(~np.isfinite(np.atleast_1d(g_arr)))[0])
            raise NumericalError(f"non-finite gradient in parameter {name!r} at index {bad}")
    return grads


def finite_difference_gradients(
    model: RerankerModel,
    features: np.ndarray,
    labels: np.ndarray,
    pairs: np.ndarray,
    cfg: TrainConfig,
    step: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central finite differences of `hybrid_objective`, the independent
    check for the analytic gradients.  Slow; test/diagnostic use only."""
    flat = model.flatten_params()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (
            hybrid_objective(model.with_flat_params(up), features, labels, pairs, cfg)
            - hybrid_objective(model.with_flat_params(down), features, labels, pairs, cfg)
        ) / (2.0 * step)
    out: dict[str, np.ndarray] = {}
    pos = 0
    for name in model.param_names():
        size = model.params[name].size
        out[name] = grad[pos : pos + size].reshape(model.params[name].shape)
        pos += size
    return out


# ---------------------------------------------------------------------------
# Optimizers and the training loop


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    l_ce: float
    l_rank: float
    l_total: float


def train(
    dataset: Sequence[LabeledExample],
    cfg: TrainConfig,
    idf=None,
) -> tuple[RerankerModel, list[EpochStats]]:
    """Train a scorer against the labeled gains.

    Batches keep query groups whole so every sampled pair falls inside one
    optimization step; CE averages over the step's examples and the pair
    loss sums over the step's pairs.  Deterministic for a fixed seed.
    """
    if not dataset:
        raise InvalidInputError("dataset must be nonempty")
    features, schema_id = featurize_examples(dataset, idf)
    labels = np.array([e.label for e in dataset], dtype=np.float64)
    n, dim = features.shape

    seed_init, seed_pairs, seed_shuffle = (
        int(x) for x in np.random.SeedSequence(cfg.seed).generate_state(3)
    )
    model = init_model(
        cfg.architecture, dim, schema_id=schema_id, hidden_units=cfg.hidden_units, seed=seed_init
    )
    model.train_config = cfg.to_dict()

    pairs = sample_pairs(
        dataset,
        policy=cfg.pair_policy,
        cap_per_query=cfg.pair_cap_per_query,
        seed=seed_pairs,
        mig_margin=cfg.mig_margin,
    )
    if not pairs and cfg.alpha < 1.0:
        warnings.warn(
            "no rank pairs could be sampled; training on the classification loss only",
            RuntimeWarning,
            stacklevel=2,
        )
    all_pairs = pair_index_array(pairs)

    # query groups, each a list of dataset row indices
    group_map: dict[str, list[int]] = {}
    for idx, ex in enumerate(dataset):
        group_map.setdefault(ex.triplet.query, []).append(idx)
    group_rows = [np.array(group_map[q], dtype=np.int64) for q in sorted(group_map)]
    pairs_by_query: dict[str, list[RankPair]] = {}
    for p in pairs:
        pairs_by_query.setdefault(p.query_id, []).append(p)
    group_queries = sorted(group_map)

    shuffle_rng = np.random.default_rng(seed_shuffle)
    optimizer = (
        _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(cfg.learning_rate)
    )

    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(group_rows))
        batch_rows: list[np.ndarray] = []
        batch_queries: list[str] = []
        count = 0

        def flush() -> None:
            nonlocal batch_rows, batch_queries, count
            if not batch_rows:
                return
            rows = np.concatenate(batch_rows)
            remap = {int(r): k for k, r in enumerate(rows)}
            step_pairs = [
                (remap[p.pos_index], remap[p.neg_index])
                for q in batch_queries
                for p in pairs_by_query.get(q, ())
            ]
            step_pair_arr = (
                np.array(step_pairs, dtype=np.int64)
                if step_pairs
                else np.zeros((0, 2), dtype=np.int64)
            )
            grads = hybrid_gradients(model, features[rows], labels[rows], step_pair_arr, cfg)
            optimizer.step(model.params, grads)
            batch_rows, batch_queries, count = [], [], 0

        for gi in order:
            batch_rows.append(group_rows[gi])
            batch_queries.append(group_queries[gi])
            count += len(group_rows[gi])
            if count >= cfg.batch_size:
                flush()
        flush()

        s_all = model.score_matrix(features)
        l_ce = ce_loss(logistic(s_all), labels)
        if all_pairs.shape[0] > 0:
            diffs = s_all[all_pairs[:, 0]] - s_all[all_pairs[:, 1]]
            l_rank = ranknet_loss(diffs, sigma=cfg.sigma, mean_reduction=cfg.ranknet_mean)
        else:
            l_rank = 0.0
        l_total = hybrid_loss(cfg.alpha, l_ce, l_rank)
        if not math.isfinite(l_total):
            raise TrainingDivergedError(
                f"total loss became non-finite at epoch {epoch} "
                f"(l_ce={l_ce}, l_rank={l_rank})"
            )
        history.append(EpochStats(epoch=epoch, l_ce=l_ce, l_rank=l_rank, l_total=l_total))

    return model, history
