"""Top-K retrieval per modality over causal history, plus similarity completion.

Speech retrieval ranks history by the fused FastDTW + pooled-cosine
similarity; text retrieval ranks by cosine over sentence embeddings. Ties
break toward the more recent utterance. Candidates arriving from both
modalities are merged so the downstream decision matrix has no repeated rows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from convctx.database import ContextDatabase, history_of
from convctx.embedder import TextEmbedder, embed_text
from convctx.errors import KernelError
from convctx.kernels import (
    DEFAULT_RADIUS,
    DEFAULT_WEIGHTS,
    SpeechSimilarityWeights,
    cosine,
    frame_level_similarity,
)
from convctx.records import ContextRecord

DEFAULT_TOP_K = 3

SOURCE_SPEECH = "speech"
SOURCE_TEXT = "text"


@dataclass(frozen=True)
class RetrievalCandidate:
    """A history record annotated with retrieval similarities.

    sw / tw may be None until complete_similarities fills the missing
    modality.
    """

    record: ContextRecord
    sw: float | None
    tw: float | None
    source: str

    @property
    def index(self) -> int:
        return self.record.id.index


def _pooled(record: ContextRecord):
    if record.pooled is not None:
        return record.pooled
    return record.speech.frames.mean(axis=0)


def _text_vec(record: ContextRecord, embedder: TextEmbedder):
    if record.text_vec is not None:
        return record.text_vec
    return embed_text(embedder, record.hypothesis, utterance_id=record.id)


def _speech_sim(
    current: ContextRecord,
    other: ContextRecord,
    weights: SpeechSimilarityWeights,
    radius: int,
) -> float:
    # Identical to kernels.speech_similarity, but reuses the cached pooled
    # vectors (bit-equal to mean_pool on the same frames).
    frame_sim = frame_level_similarity(current.speech, other.speech, radius)
    utt_sim = cosine(_pooled(current), _pooled(other))
    return weights.w_frame * frame_sim + weights.w_utt * utt_sim


def _top_k(scored: list[tuple[float, ContextRecord]], k: int) -> list[tuple[float, ContextRecord]]:
    # Descending similarity; equal similarities prefer the later utterance.
    scored.sort(key=lambda it: (-it[0], -it[1].id.index))
    return scored[:k]


def retrieve_speech_topk(
    db: ContextDatabase,
    current: ContextRecord,
    k: int = DEFAULT_TOP_K,
    weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS,
    radius: int = DEFAULT_RADIUS,
) -> list[RetrievalCandidate]:
    """Top-k history records by speech retrieval similarity to current."""
    if k < 1:
        raise KernelError(f"k must be >= 1, got {k}")
    scored = [
        (_speech_sim(current, rec, weights, radius), rec)
        for rec in history_of(db, current.id)
    ]
    return [
        RetrievalCandidate(record=rec, sw=sim, tw=None, source=SOURCE_SPEECH)
        for sim, rec in _top_k(scored, k)
    ]


def retrieve_text_topk(
    db: ContextDatabase,
    current: ContextRecord,
    k: int = DEFAULT_TOP_K,
    embedder: TextEmbedder | None = None,
) -> list[RetrievalCandidate]:
    """Top-k history records by text retrieval similarity to current."""
    if k < 1:
        raise KernelError(f"k must be >= 1, got {k}")
    cur_vec = _text_vec(current, embedder) if embedder is not None else current.text_vec
    if cur_vec is None:
        raise KernelError("current record has no text vector and no embedder was given")
    scored = []
    for rec in history_of(db, current.id):
        vec = _text_vec(rec, embedder) if embedder is not None else rec.text_vec
        if vec is None:
            raise KernelError(f"record {rec.id} has no text vector and no embedder was given")
        scored.append((cosine(cur_vec, vec), rec))
    return [
        RetrievalCandidate(record=rec, sw=None, tw=sim, source=SOURCE_TEXT)
        for sim, rec in _top_k(scored, k)
    ]


def complete_similarities(
    candidates: list[RetrievalCandidate],
    current: ContextRecord,
    weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS,
    radius: int = DEFAULT_RADIUS,
    embedder: TextEmbedder | None = None,
) -> list[RetrievalCandidate]:
    """Fill the missing modality for every candidate and merge duplicates.

    Values already present are never recomputed; a record arriving from both
    Top-K lists becomes one candidate carrying both retrieval similarities.
    Output order is first-seen input order.
    """
    merged: dict = {}
    order: list = []
    for cand in candidates:
        uid = cand.record.id
        if uid not in merged:
            merged[uid] = cand
            order.append(uid)
            continue
        existing = merged[uid]
        merged[uid] = replace(
            existing,
            sw=existing.sw if existing.sw is not None else cand.sw,
            tw=existing.tw if existing.tw is not None else cand.tw,
        )

    out: list[RetrievalCandidate] = []
    for uid in order:
        cand = merged[uid]
        sw = cand.sw
        tw = cand.tw
        if sw is None:
            sw = _speech_sim(current, cand.record, weights, radius)
        if tw is None:
            cur_vec = _text_vec(current, embedder) if embedder is not None else current.text_vec
            vec = _text_vec(cand.record, embedder) if embedder is not None else cand.record.text_vec
            if cur_vec is None or vec is None:
                raise KernelError(f"cannot complete tw for {uid}: missing text vector and no embedder")
            tw = cosine(cur_vec, vec)
        out.append(replace(cand, sw=sw, tw=tw))
    return out
