"""Shared builders for synthetic test data."""

import numpy as np

from evigain.confidence import ConfidenceValue
from evigain.mig import LabeledExample, ScoredTriplet, Triplet


def scored_from_mig(triplet, mig):
    """Valid ScoredTriplet with the requested gain, probabilities centered
    on 0.5 (requires |mig| < 1)."""
    conf_with = ConfidenceValue(0.5 + mig / 2.0, "probability")
    conf_without = ConfidenceValue(0.5 - mig / 2.0, "probability")
    return ScoredTriplet(
        triplet=triplet,
        conf_with=conf_with,
        conf_without=conf_without,
        mig=conf_with.value - conf_without.value,
    )


def labeled(eid, query, document, mig, lab, answer="answer"):
    return LabeledExample(
        triplet=Triplet(id=eid, query=query, answer=answer, document=document),
        mig=mig,
        label=lab,
    )


def separable_dataset(n_queries, n_pos=1, n_neg=3, seed=0, id_prefix="q"):
    """Linearly separable synthetic set: positives contain every query term
    (featurizer coverage 1), negatives none (coverage 0).

    Positive gains are drawn from U(0.3, 0.6); a query's negatives share
    the gain -0.4, so pos-vs-neg ordering is the only comparable signal."""
    rng = np.random.default_rng(seed)
    rows = []
    for q in range(n_queries):
        terms = [f"{id_prefix}{q}t{j}" for j in range(3)]
        query = " ".join(terms)
        for i in range(n_pos):
            doc = " ".join(terms + [f"{id_prefix}{q}extra{i}{int(rng.integers(0, 100))}"])
            rows.append(labeled(f"{id_prefix}{q}p{i}", query, doc,
                                float(rng.uniform(0.3, 0.6)), 1))
        for i in range(n_neg):
            doc = " ".join(f"{id_prefix}noise{int(rng.integers(0, 20000))}"
                           for _ in range(int(rng.integers(3, 9))))
            rows.append(labeled(f"{id_prefix}{q}n{i}", query, doc, -0.4, 0))
    return rows


def as_scored(rows):
    return [scored_from_mig(r.triplet, r.mig) for r in rows]
