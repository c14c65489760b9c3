#!/usr/bin/env python3
"""How a sequence of per-token probabilities becomes one confidence value.

Three strategies are compared on the same answer: the naive equal-weight
product (fragile: one bad token tanks it), the position-weighted product
(mid-answer tokens dominate), and the idf-anchored mean log-probability
(stopwords are ignored entirely).
"""

import math

import numpy as np

from evigain import (
    ConfidenceStrategy,
    TokenLogProbSequence,
    build_idf_table,
    confidence,
    positional_weights,
    semantic_mask,
)

# The quadratic weight profile: maximum c at the peak position, attenuating
# at rate k, floored at zero.
print("positional weight profile, k=0.2 c=1.5 peak=5, for a 10-token answer:")
w = positional_weights(10, k=0.2, c=1.5, peak=5)
for i, wi in enumerate(w, start=1):
    bar = "#" * int(round(wi * 20))
    print(f"  position {i:2d}  w={wi:4.2f}  {bar}")

# An answer whose first token is uncertain but whose semantic core is
# confidently predicted.
tokens = ("the", "eiffel", "tower", "is", "in", "paris")
probs = (0.30, 0.92, 0.95, 0.85, 0.90, 0.97)
seq = TokenLogProbSequence(tokens=tokens, logprobs=tuple(math.log(p) for p in probs))
print("\nanswer tokens and probabilities:")
for t, p in zip(tokens, probs):
    print(f"  {t:8s} p={p:.2f}")

equal = confidence(seq, ConfidenceStrategy(kind="equal"))
positional = confidence(seq, ConfidenceStrategy(kind="positional", k=0.2, c=1.5, peak=3.5))
print(f"\nequal-weight product:      {equal.value:.4f}  (scale: {equal.scale})")
print(f"position-weighted product: {positional.value:.4f}  (scale: {positional.scale})")
print("the weighted product discounts the shaky leading token")

# The anchored variant needs document frequencies to know which tokens are
# information-bearing.  Build an idf table from a tiny corpus where "the",
# "is", "in" appear everywhere.
corpus = [
    "the tower is in paris",
    "the cathedral is in rouen",
    "the museum is in lyon",
    "the eiffel tower attracts visitors",
]
idf = build_idf_table(corpus)
mask = semantic_mask(tokens, idf, tau_freq=0.15)
print("\nidf values and anchor mask (tau_freq=0.15):")
for t, m in zip(tokens, mask):
    print(f"  {t:8s} idf={idf.lookup(t):.3f}  anchor={int(m)}")

anchored = confidence(seq, ConfidenceStrategy(kind="semantic_anchor", tau_freq=0.15, idf=idf))
print(f"\nanchored mean log-probability: {anchored.value:.4f}  (scale: {anchored.scale})")
print(f"equivalent probability:        {np.exp(anchored.value):.4f}")
print("stopword probabilities no longer dilute the score")
