"""Exception hierarchy shared across the engine.

The CLI maps these onto distinct exit codes (see convctx.cli), so new error
types should subclass the closest existing category rather than the base.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all convctx errors."""


class ManifestError(EngineError):
    """Malformed manifest row, missing field, or duplicate utterance id."""


class IngestionError(EngineError):
    """Referenced embedding payload is missing or unreadable."""


class PayloadFormatError(EngineError):
    """Embedding payload bytes or dimensions do not match the format."""


class ConversationNotFoundError(EngineError):
    """Lookup against a conversation id the database does not contain."""


class KernelError(EngineError):
    """Invalid input to a similarity kernel (empty sequence, dim mismatch)."""


class EmbeddingError(EngineError):
    """Text embedding failed; carries the utterance id when known."""

    def __init__(self, message: str, utterance_id: object | None = None):
        super().__init__(message)
        self.utterance_id = utterance_id


class SelectionError(EngineError):
    """Selection invoked on an empty candidate list."""


class ConfigurationError(EngineError):
    """Invalid run configuration or unregistered language tag."""


class BackendError(EngineError):
    """ASR backend failed to transcribe an utterance."""


class ScoringError(EngineError):
    """Metric computation is undefined for the given inputs."""
