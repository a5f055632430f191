"""Domain types: utterance ids, speech embeddings, and per-utterance records."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from convctx.errors import ManifestError, PayloadFormatError


@dataclass(frozen=True, order=True)
class UtteranceId:
    """Position of one utterance: conversation plus 0-based index.

    Ordering by index equals temporal order within a conversation.
    """

    conversation_id: str
    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ManifestError(f"utterance index must be >= 0, got {self.index}")

    def __str__(self) -> str:
        return f"{self.conversation_id}#{self.index}"

    @classmethod
    def parse(cls, text: str) -> "UtteranceId":
        """Parse the 'conversation#index' wire form (last '#' separates)."""
        conv, sep, idx = text.rpartition("#")
        if not sep or not conv:
            raise ManifestError(f"not an utterance id: {text!r}")
        try:
            return cls(conv, int(idx))
        except ValueError:
            raise ManifestError(f"not an utterance id: {text!r}") from None


@dataclass(frozen=True, eq=False)
class SpeechEmbedding:
    """Frame-level embedding sequence, shape (n_frames, dim), float64."""

    frames: np.ndarray

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise PayloadFormatError(f"frames must be 2-D, got shape {frames.shape}")
        if frames.shape[0] == 0 or frames.shape[1] == 0:
            raise PayloadFormatError(f"frames must be non-empty, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise PayloadFormatError("frames contain non-finite values")
        frames = np.ascontiguousarray(frames)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(eq=False)
class ContextRecord:
    """One stored utterance: id, speech embedding sequence, and hypothesis.

    pooled and text_vec are caches; build_database always populates them,
    hand-constructed records may leave them None until a consumer fills them.
    """

    id: UtteranceId
    speech: SpeechEmbedding
    hypothesis: str
    language: str
    pooled: np.ndarray | None = None
    text_vec: np.ndarray | None = None

    def with_caches(self, embedder) -> "ContextRecord":
        """Return a copy with pooled / text_vec filled where missing."""
        pooled = self.pooled
        if pooled is None:
            pooled = self.speech.frames.mean(axis=0)
        text_vec = self.text_vec
        if text_vec is None:
            text_vec = embedder.embed(self.hypothesis)
        return replace(self, pooled=pooled, text_vec=text_vec)
