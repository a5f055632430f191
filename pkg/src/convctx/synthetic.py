"""Deterministic synthetic conversational corpora with topical recurrence.

Every utterance introduces a few fresh topic tokens and echoes the topic
tokens of one designated earlier utterance at a sampled gap, so the most
relevant historical context sits a controllable distance back. Speech
embeddings mix the utterance's own motif direction with its source's, which
makes designated pairs acoustically similar under both DTW and pooled
cosine. Hypotheses are references with seeded token corruptions.

The generator emits exactly the manifest and embedding payload formats that
build_database ingests, so the full pipeline runs unmodified on synthetic
data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from convctx.database import ManifestRow, write_manifest, write_payload
from convctx.errors import ConfigurationError
from convctx.records import UtteranceId

_MIN_FRAMES = 4


@dataclass(frozen=True)
class CorpusSpec:
    n_conversations: int = 10
    utterances_per_conversation: int = 20
    embedding_dim: int = 32
    frames_per_utterance: int = 30
    topic_token_count: int = 4
    filler_token_count: int = 4
    filler_vocab_size: int = 200
    gap_min: int = 1
    gap_max: int = 9
    embedding_noise: float = 0.1
    hypothesis_noise: float = 0.25
    languages: tuple[str, ...] = ("en", "de", "fr", "es")
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_conversations < 1 or self.utterances_per_conversation < 1:
            raise ConfigurationError("corpus needs at least one conversation and utterance")
        if self.embedding_dim < 2 or self.frames_per_utterance < _MIN_FRAMES:
            raise ConfigurationError(
                f"embedding_dim must be >= 2 and frames_per_utterance >= {_MIN_FRAMES}"
            )
        if not 1 <= self.gap_min <= self.gap_max:
            raise ConfigurationError(f"need 1 <= gap_min <= gap_max, got {self.gap_min}..{self.gap_max}")
        if not (0.0 <= self.embedding_noise and 0.0 <= self.hypothesis_noise <= 1.0):
            raise ConfigurationError("noise levels out of range")
        if not self.languages:
            raise ConfigurationError("languages must not be empty")

    @classmethod
    def from_dict(cls, raw: dict) -> "CorpusSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown corpus spec fields: {sorted(unknown)}")
        if "languages" in raw:
            raw = dict(raw)
            raw["languages"] = tuple(raw["languages"])
        return cls(**raw)


@dataclass
class GeneratedCorpus:
    spec: CorpusSpec
    rows: list[ManifestRow]
    frames: dict[UtteranceId, np.ndarray]
    references: dict[UtteranceId, str]
    designated: dict[UtteranceId, UtteranceId] = field(default_factory=dict)


def _corrupt_token(token: str, tag: int) -> str:
    return f"{token}^{tag}"


def generate_corpus(spec: CorpusSpec) -> GeneratedCorpus:
    """Generate manifest rows, embedding frames, and hidden references."""
    rng = np.random.default_rng(spec.seed)
    fillers = [f"f{i:03d}" for i in range(spec.filler_vocab_size)]
    rows: list[ManifestRow] = []
    frames: dict[UtteranceId, np.ndarray] = {}
    references: dict[UtteranceId, str] = {}
    designated: dict[UtteranceId, UtteranceId] = {}

    f_hi = spec.frames_per_utterance
    f_lo = max(_MIN_FRAMES, (2 * f_hi) // 3)

    for c in range(spec.n_conversations):
        conv_id = f"conv{c:04d}"
        language = spec.languages[c % len(spec.languages)]
        n_utt = spec.utterances_per_conversation
        motifs = rng.normal(size=(n_utt, spec.embedding_dim))
        motifs /= np.linalg.norm(motifs, axis=1, keepdims=True)
        own_tokens = [
            [f"t{c}_{u}_{j}" for j in range(spec.topic_token_count)] for u in range(n_utt)
        ]

        for u in range(n_utt):
            uid = UtteranceId(conv_id, u)
            if u == 0:
                source = None
            else:
                gap = int(rng.integers(spec.gap_min, spec.gap_max + 1))
                source = max(0, u - gap)
                designated[uid] = UtteranceId(conv_id, source)

            tokens = list(own_tokens[u])
            if source is not None:
                tokens += own_tokens[source]
            tokens += [fillers[int(i)] for i in rng.integers(0, len(fillers), spec.filler_token_count)]
            tokens = [tokens[int(i)] for i in rng.permutation(len(tokens))]
            reference = " ".join(tokens)

            hyp_tokens = []
            for pos, token in enumerate(tokens):
                if rng.random() < spec.hypothesis_noise:
                    hyp_tokens.append(_corrupt_token(token, pos % 10))
                else:
                    hyp_tokens.append(token)
            hypothesis = " ".join(hyp_tokens)

            direction = motifs[u] if source is None else motifs[u] + motifs[source]
            direction = direction / np.linalg.norm(direction)
            n_frames = int(rng.integers(f_lo, f_hi + 1))
            walk = np.cumsum(rng.normal(size=(n_frames, spec.embedding_dim)), axis=0)
            walk /= max(1.0, np.abs(walk).max())
            utt_frames = direction[None, :] + spec.embedding_noise * walk
            frames[uid] = utt_frames.astype(np.float32)

            rows.append(
                ManifestRow(
                    id=uid,
                    language=language,
                    hypothesis=hypothesis,
                    reference=reference,
                    embedding_path=f"embeddings/{conv_id}_{u:05d}.emb",
                )
            )
            references[uid] = reference

    return GeneratedCorpus(spec=spec, rows=rows, frames=frames, references=references, designated=designated)


def write_corpus(corpus: GeneratedCorpus, out_dir: str | Path) -> Path:
    """Write manifest.jsonl plus embedding payloads (and a designated-context
    sidecar for debugging; the pipeline itself never reads it)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for row in corpus.rows:
        write_payload(out / row.embedding_path, corpus.frames[row.id])
    write_manifest(out / "manifest.jsonl", corpus.rows)
    with (out / "designated.jsonl").open("w", encoding="utf-8") as fh:
        for uid, src in sorted(corpus.designated.items()):
            fh.write(json.dumps({"utterance": str(uid), "designated": str(src)}) + "\n")
    return out
