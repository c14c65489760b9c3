#!/usr/bin/env python3
"""The serving path: tf-idf retrieval, reranking, context assembly.

A small corpus, a reranker trained on synthetic gains, and one query walk
through the stages.  The assembled prompt is the pipeline's boundary: it
is ready to feed any generator.
"""

from evigain import (
    Corpus,
    CorpusDoc,
    TfidfIndex,
    TrainConfig,
    assemble_context,
    rerank,
    retrieve_rerank_context,
    tfidf_retrieve,
    train,
)
from evigain.mig import LabeledExample, Triplet

corpus = Corpus({
    "louvre":   CorpusDoc("the louvre museum in paris holds the mona lisa"),
    "capital":  CorpusDoc("paris is the capital of france and its largest city"),
    "cheese":   CorpusDoc("france produces hundreds of varieties of cheese"),
    "seine":    CorpusDoc("the seine river flows through the heart of paris"),
    "tokyo":    CorpusDoc("tokyo is the capital of japan"),
    "banana":   CorpusDoc("bananas are a yellow tropical fruit"),
})
query = "what is the capital city of france"

index = TfidfIndex(corpus)
candidates = tfidf_retrieve(query, corpus, m=4, index=index)
print(f"query: {query}\n\nretrieval (tf-idf cosine, top 4):")
for doc_id, score in candidates.ranked:
    print(f"  {score:.4f}  {doc_id:8s} {corpus.get(doc_id).text}")

# a quick reranker: positives fully cover their query terms
rows = []
for q in range(60):
    terms = [f"d{q}x{j}" for j in range(3)]
    rows.append(LabeledExample(
        triplet=Triplet(id=f"d{q}p", query=" ".join(terms),
                        answer="a", document=" ".join(terms + ["more"])),
        mig=0.5, label=1))
    rows.append(LabeledExample(
        triplet=Triplet(id=f"d{q}n", query=" ".join(terms),
                        answer="a", document=f"unrelated d{q} filler words"),
        mig=-0.4, label=0))
model, _ = train(rows, TrainConfig(epochs=30, seed=0))

top = rerank(model, query, candidates, corpus, k=2)
print("\nreranked top 2:")
for doc_id, score in top:
    print(f"  {score:+.4f}  {doc_id:8s} {corpus.get(doc_id).text}")

prompt = assemble_context(query, [(d, corpus.get(d).text) for d, _ in top])
print("\nassembled context:\n" + "-" * 60)
print(prompt)
print("-" * 60)

# the one-call form, and the no-evidence baseline prompt
_, full = retrieve_rerank_context(model, query, corpus, m=4, k=2, index=index)
assert full == prompt
print("\nwith no evidence selected the prompt degrades to the query-only form:")
print(repr(assemble_context(query, [])))
