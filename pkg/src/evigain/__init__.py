"""evigain: information-gain scoring of retrieved evidence and a
lightweight reranker trained to track it.

The toolkit measures how much a retrieved document actually helps a
teacher model produce a known-good answer (the confidence delta with and
without the document in context), turns those gains into balanced
ranking datasets, trains a small scorer with a hybrid
classification + pairwise-ranking objective, and serves a
retrieve -> rerank -> context-assembly pipeline.
"""

__version__ = "0.1.0"

from .confidence import (
    ConfidenceStrategy,
    ConfidenceValue,
    FallbackWarning,
    IdfTable,
    anchored_mean_logprob,
    build_idf_table,
    confidence,
    positional_weights,
    semantic_mask,
    weighted_confidence,
)
from .errors import (
    ConfigError,
    EvigainError,
    InvalidInputError,
    MissingLogprobsError,
    NoEvaluablePairsError,
    NumericalError,
    RecordParseError,
    SchemaMismatchError,
    ScoringError,
    TeacherEndpointError,
    TokenAlignmentError,
    TrainingDivergedError,
    UnbalanceableDatasetError,
)
from .mig import (
    BaselineCache,
    DatasetStats,
    Label,
    LabeledExample,
    LabelingConfig,
    ScoredTriplet,
    Triplet,
    build_dataset,
    compute_mig,
    dataset_stats,
    label,
    load_labeled,
    load_scored,
    load_triplets,
    save_labeled,
    save_scored,
    score_from_sequences,
)
from .pipeline import (
    ContextTemplate,
    Corpus,
    CorpusDoc,
    RankingMetrics,
    RetrievalResult,
    TfidfIndex,
    assemble_context,
    eval_ranking,
    ranking_metrics_from_scores,
    rerank,
    retrieve_rerank_context,
    tfidf_retrieve,
)
from .reranker import (
    EpochStats,
    FeatureVector,
    RankPair,
    RerankerModel,
    TrainConfig,
    ce_loss,
    featurize,
    finite_difference_gradients,
    hybrid_gradients,
    hybrid_loss,
    init_model,
    ranknet_loss,
    sample_pairs,
    train,
)
from .teacher import (
    ClientOptions,
    HttpTeacher,
    LogProbRecord,
    MockTeacher,
    MockTeacherParams,
    TeacherRequest,
    TokenLogProbSequence,
    fetch_logprobs,
    load_logprob_records,
    mock_logprobs,
    save_logprob_records,
)
