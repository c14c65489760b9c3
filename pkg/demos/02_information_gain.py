#!/usr/bin/env python3
"""Scoring documents by information gain and building a labeled dataset.

A document's gain is the teacher-confidence delta: how much more confident
the teacher is in the ground-truth answer with the document in context
than without it.  Positive gain means the document carries the evidence;
zero means redundant or irrelevant; negative means distracting.

The deterministic mock teacher stands in for a real model here: its
per-token probability rises when the token appears in the document.  A
negatively-coupled teacher (a1 < 0) shows what distracting evidence looks
like.
"""

from evigain import (
    BaselineCache,
    ConfidenceStrategy,
    LabelingConfig,
    MockTeacher,
    MockTeacherParams,
    Triplet,
    build_dataset,
    compute_mig,
    label,
)

strategy = ConfidenceStrategy(kind="positional", k=0.2, c=1.5, peak=5)
teacher = MockTeacher()

query = "what is the capital of france"
answer = "the capital city of france is paris"
documents = {
    "relevant":   "paris is the capital city of france",
    "partial":    "france is a country in western europe",
    "irrelevant": "bananas are a yellow tropical fruit",
}

print(f"query:  {query}")
print(f"answer: {answer}\n")

cache = BaselineCache()  # the without-document baseline is shared
scored = []
for name, document in documents.items():
    st = compute_mig(
        Triplet(id=name, query=query, answer=answer, document=document),
        teacher, strategy, baseline_cache=cache,
    )
    scored.append(st)
    print(f"{name:10s} conf_with={st.conf_with.value:.4f} "
          f"conf_without={st.conf_without.value:.4f} gain={st.mig:+.4f} "
          f"-> {label(st, LabelingConfig()).name}")

print("\nthe baseline was computed once and cached:", len(cache), "entry")

# Distracting documents require a teacher that can lose confidence; flip the
# document coupling negative to simulate one (confident baseline, a0=1.5,
# that overlap actively hurts).
confused = MockTeacher(MockTeacherParams(a0=1.5, a1=-3.0, a2=0.5))
st = compute_mig(
    Triplet(id="distractor", query=query, answer=answer,
            document="paris hilton starred in a reality show"),
    confused, strategy,
)
print(f"\nnegatively-coupled teacher on a misleading doc: gain={st.mig:+.4f} "
      f"-> {label(st, LabelingConfig()).name}")

# Labeled dataset: neutrals discarded, classes balanced 1:1 by seeded
# downsampling of the majority class.
synthetic = scored + [st]
for i in range(6):
    synthetic.append(compute_mig(
        Triplet(id=f"extra{i}", query=query, answer=answer,
                document="paris is the capital city of france"),
        teacher if i % 2 == 0 else confused, strategy, baseline_cache=cache))

dataset, stats = build_dataset(synthetic, LabelingConfig(b1=0.2, b2=-0.2), seed=0)
print(f"\ndataset: {len(dataset)} examples "
      f"({stats.positives} positive, {stats.negatives} negative, "
      f"{stats.discarded} neutral discarded)")
print("gain histogram (bin start -> count):")
for lo, count in stats.histogram:
    print(f"  {lo:+.2f}  {'*' * count}")
