from __future__ import annotations

import numpy as np
import pytest

from convctx.database import ContextDatabase, DatabaseMeta
from convctx.embedder import NgramHashEmbedder
from convctx.records import ContextRecord, SpeechEmbedding, UtteranceId
from convctx.retrieval import RetrievalCandidate


@pytest.fixture(scope="session")
def embedder():
    return NgramHashEmbedder(64)


def make_record(conv: str, index: int, frames, hypothesis: str, embedder, language: str = "en") -> ContextRecord:
    speech = SpeechEmbedding(np.asarray(frames, dtype=np.float64).reshape(len(frames), -1))
    return ContextRecord(
        id=UtteranceId(conv, index),
        speech=speech,
        hypothesis=hypothesis,
        language=language,
        pooled=speech.frames.mean(axis=0),
        text_vec=embedder.embed(hypothesis),
    )


def make_db(records: list[ContextRecord], embedder, references: dict | None = None) -> ContextDatabase:
    conversations: dict[str, list[int]] = {}
    for rec in records:
        conversations.setdefault(rec.id.conversation_id, []).append(rec.id.index)
    for indices in conversations.values():
        indices.sort()
    refs = {rec.id: rec.hypothesis for rec in records}
    if references:
        refs.update(references)
    return ContextDatabase(
        records={rec.id: rec for rec in records},
        conversations=conversations,
        meta=DatabaseMeta(
            speech_dim=records[0].speech.dim, text_dim=embedder.dim, embedder_id=embedder.id
        ),
        references=refs,
        embedding_paths={rec.id: f"embeddings/{rec.id.conversation_id}_{rec.id.index}.emb" for rec in records},
    )


def fabricate_candidates(sw, tw) -> list[RetrievalCandidate]:
    """Candidates with ascending utterance indices carrying raw similarities."""
    frames = np.zeros((1, 1))
    cands = []
    for i, (s, t) in enumerate(zip(sw, tw)):
        rec = ContextRecord(
            id=UtteranceId("fab", i),
            speech=SpeechEmbedding(frames),
            hypothesis="",
            language="en",
            pooled=frames[0],
            text_vec=np.zeros(4),
        )
        cands.append(RetrievalCandidate(record=rec, sw=float(s), tw=float(t), source="speech"))
    return cands
