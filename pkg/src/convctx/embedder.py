"""Sentence-embedding interface for text retrieval similarity.

Two implementations ship with the engine: a dependency-free character
3-gram hashing embedder (deterministic, used by tests and the default
pipeline) and a loader for precomputed vectors so any external model's
embeddings can be brought in offline.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from convctx.errors import ConfigurationError, EmbeddingError, PayloadFormatError
from convctx.hashing import fnv1a64

_NGRAM_SEED = 0x7C0FFEE5
DEFAULT_TEXT_DIM = 256


@runtime_checkable
class TextEmbedder(Protocol):
    """Embedder contract: deterministic, fixed output dimension."""

    @property
    def id(self) -> str: ...

    @property
    def dim(self) -> int: ...

    def embed(self, text: str) -> np.ndarray: ...


def embed_text(embedder: TextEmbedder, text: str, utterance_id=None) -> np.ndarray:
    """Embed text, tagging failures with the owning utterance id when known."""
    try:
        vec = embedder.embed(text)
    except EmbeddingError as exc:
        if exc.utterance_id is None and utterance_id is not None:
            raise EmbeddingError(str(exc), utterance_id=utterance_id) from exc
        raise
    return vec


def reference_ngram_embed(text: str, dim: int = DEFAULT_TEXT_DIM) -> np.ndarray:
    """Hash lowercased character 3-grams into dim buckets, L2-normalized.

    Empty text (or text shorter than 3 characters) has no 3-grams and maps
    to the zero vector.
    """
    if dim < 16:
        raise EmbeddingError(f"reference embedder needs dim >= 16, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    lowered = text.lower()
    for i in range(len(lowered) - 2):
        bucket = fnv1a64(lowered[i : i + 3], seed=_NGRAM_SEED) % dim
        vec[bucket] += 1.0
    norm = math.sqrt(float(vec @ vec))
    if norm > 0.0:
        vec /= norm
    return vec


class NgramHashEmbedder:
    """Reference embedder: character 3-gram hashing, no model required."""

    def __init__(self, dim: int = DEFAULT_TEXT_DIM):
        if dim < 16:
            raise EmbeddingError(f"reference embedder needs dim >= 16, got {dim}")
        self._dim = dim

    @property
    def id(self) -> str:
        return f"ngram-hash-v1-d{self._dim}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        return reference_ngram_embed(text, self._dim)


class PrecomputedEmbedder:
    """Embedder answering from a fixed text -> vector table."""

    def __init__(self, table: dict[str, np.ndarray], embedder_id: str = "precomputed"):
        if not table:
            raise PayloadFormatError("precomputed vector table is empty")
        dims = {v.shape[0] for v in table.values()}
        if len(dims) != 1:
            raise PayloadFormatError(f"precomputed vectors have mixed dimensions: {sorted(dims)}")
        self._table = table
        self._dim = dims.pop()
        self._id = embedder_id

    @property
    def id(self) -> str:
        return self._id

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        vec = self._table.get(text)
        if vec is None:
            raise EmbeddingError(f"no precomputed vector for text {text!r}")
        return vec


def load_precomputed_vectors(path: str | Path) -> PrecomputedEmbedder:
    """Load a line-delimited {key, vector} table into an embedder.

    Keys are either exact hypothesis strings or 'conversation_id#index'.
    """
    path = Path(path)
    table: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                key = row["key"]
                vector = row["vector"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise PayloadFormatError(f"{path}:{lineno}: bad vector record ({exc})") from exc
            vec = np.asarray(vector, dtype=np.float64)
            if vec.ndim != 1 or vec.shape[0] == 0 or not np.all(np.isfinite(vec)):
                raise PayloadFormatError(f"{path}:{lineno}: vector must be a finite 1-D float list")
            vec.setflags(write=False)
            table[str(key)] = vec
    try:
        return PrecomputedEmbedder(table, embedder_id=f"precomputed:{path.name}")
    except PayloadFormatError as exc:
        raise PayloadFormatError(f"{path}: {exc}") from exc


def make_embedder(spec: str, dim: int = DEFAULT_TEXT_DIM) -> TextEmbedder:
    """Build an embedder from a CLI-style spec: 'reference' or 'precomputed:<path>'."""
    if spec == "reference":
        return NgramHashEmbedder(dim)
    if spec.startswith("precomputed:"):
        return load_precomputed_vectors(spec.split(":", 1)[1])
    raise ConfigurationError(f"unknown embedder spec {spec!r} (use 'reference' or 'precomputed:<path>')")
