"""Context retrieval-and-selection engine for conversational ASR.

Stores one (id, speech embedding, hypothesis) record per utterance, retrieves
candidate historical contexts by acoustic and textual similarity, picks the
single best context via near-ideal ranking, and orchestrates direct / mars /
two-pass decoding against a pluggable ASR backend.
"""

from convctx.database import ContextDatabase, build_database, history_of, load_database, save_database
from convctx.embedder import NgramHashEmbedder, PrecomputedEmbedder, TextEmbedder, load_precomputed_vectors
from convctx.kernels import (
    DtwResult,
    SpeechSimilarityWeights,
    cosine,
    exact_dtw,
    fast_dtw,
    frame_level_similarity,
    mean_pool,
    speech_similarity,
)
from convctx.records import ContextRecord, SpeechEmbedding, UtteranceId
from convctx.retrieval import RetrievalCandidate, complete_similarities, retrieve_speech_topk, retrieve_text_topk
from convctx.selection import (
    ClosenessRanking,
    DecisionMatrix,
    IdealPoints,
    closeness,
    ideal_points,
    normalize_matrix,
    rank_candidates,
    select_best,
    select_preceding_n,
    select_sum_top1,
)

__version__ = "0.1.0"

__all__ = [
    "ClosenessRanking",
    "ContextDatabase",
    "ContextRecord",
    "DecisionMatrix",
    "DtwResult",
    "IdealPoints",
    "NgramHashEmbedder",
    "PrecomputedEmbedder",
    "RetrievalCandidate",
    "SpeechEmbedding",
    "SpeechSimilarityWeights",
    "TextEmbedder",
    "UtteranceId",
    "build_database",
    "closeness",
    "complete_similarities",
    "cosine",
    "exact_dtw",
    "fast_dtw",
    "frame_level_similarity",
    "history_of",
    "ideal_points",
    "load_database",
    "load_precomputed_vectors",
    "mean_pool",
    "normalize_matrix",
    "rank_candidates",
    "retrieve_speech_topk",
    "retrieve_text_topk",
    "save_database",
    "select_best",
    "select_preceding_n",
    "select_sum_top1",
    "speech_similarity",
]
