"""Triplet database: manifest ingestion, payload I/O, causal history access.

Manifest format: one JSON object per line with fields conversation_id (str),
index (int), language (str), hypothesis (str), reference (optional str) and
embedding_path (relative to the manifest's directory).

Embedding payload format (bit-exact): 8-byte magic ``MARSEMB1``, uint32-LE
dim, uint32-LE n_frames, then n_frames * dim float32-LE values, frame-major.

A persisted database directory holds manifest.jsonl, embeddings/*.emb, the
cached text vectors (text_vectors.npy, float64, one row per record in
manifest order), and meta.json. Reload therefore never needs the embedder
that built the database.
"""

from __future__ import annotations

import bisect
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from convctx.embedder import TextEmbedder, embed_text
from convctx.errors import (
    ConversationNotFoundError,
    IngestionError,
    ManifestError,
    PayloadFormatError,
)
from convctx.hashing import fnv1a64
from convctx.records import ContextRecord, SpeechEmbedding, UtteranceId

PAYLOAD_MAGIC = b"MARSEMB1"
FORMAT_VERSION = 1

_MANIFEST_NAME = "manifest.jsonl"
_META_NAME = "meta.json"
_TEXTVEC_NAME = "text_vectors.npy"
_EMB_DIR = "embeddings"


# --------------------------------------------------------------------------
# Embedding payload I/O
# --------------------------------------------------------------------------


def write_payload(path: str | Path, frames: np.ndarray) -> None:
    """Write a frame matrix as a MARSEMB1 payload (float32-LE on disk)."""
    frames = np.ascontiguousarray(np.asarray(frames, dtype=np.float32))
    if frames.ndim != 2 or frames.shape[0] == 0 or frames.shape[1] == 0:
        raise PayloadFormatError(f"payload frames must be non-empty 2-D, got shape {frames.shape}")
    n_frames, dim = frames.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(PAYLOAD_MAGIC)
        fh.write(struct.pack("<II", dim, n_frames))
        fh.write(frames.astype("<f4", copy=False).tobytes(order="C"))


def read_payload(path: str | Path) -> np.ndarray:
    """Read a MARSEMB1 payload into a float32 (n_frames, dim) matrix."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read embedding payload {path}: {exc}") from exc
    if len(blob) < 16 or blob[:8] != PAYLOAD_MAGIC:
        raise PayloadFormatError(f"{path}: not a MARSEMB1 payload")
    dim, n_frames = struct.unpack_from("<II", blob, 8)
    expected = 16 + 4 * dim * n_frames
    if dim == 0 or n_frames == 0:
        raise PayloadFormatError(f"{path}: empty payload (dim={dim}, n_frames={n_frames})")
    if len(blob) != expected:
        raise PayloadFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4", offset=16)
    return flat.reshape(n_frames, dim).copy()


# --------------------------------------------------------------------------
# Manifest I/O
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    id: UtteranceId
    language: str
    hypothesis: str
    reference: str | None
    embedding_path: str


_REQUIRED_FIELDS = ("conversation_id", "index", "language", "hypothesis", "embedding_path")


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    rows: list[ManifestRow] = []
    seen: set[UtteranceId] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(raw, dict):
                raise ManifestError(f"{path}:{lineno}: manifest row must be an object")
            missing = [k for k in _REQUIRED_FIELDS if k not in raw]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
            try:
                uid = UtteranceId(str(raw["conversation_id"]), int(raw["index"]))
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad utterance id ({exc})") from exc
            if uid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance id {uid}")
            seen.add(uid)
            reference = raw.get("reference")
            rows.append(
                ManifestRow(
                    id=uid,
                    language=str(raw["language"]),
                    hypothesis=str(raw["hypothesis"]),
                    reference=None if reference is None else str(reference),
                    embedding_path=str(raw["embedding_path"]),
                )
            )
    return rows


def write_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(
                json.dumps(
                    {
                        "conversation_id": row.id.conversation_id,
                        "index": row.id.index,
                        "language": row.language,
                        "hypothesis": row.hypothesis,
                        "reference": row.reference,
                        "embedding_path": row.embedding_path,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


# --------------------------------------------------------------------------
# Database
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatabaseMeta:
    speech_dim: int
    text_dim: int
    embedder_id: str
    format_version: int = FORMAT_VERSION


@dataclass
class ContextDatabase:
    """Immutable after build; safe for concurrent readers."""

    records: dict[UtteranceId, ContextRecord]
    conversations: dict[str, list[int]]  # sorted utterance indices per conversation
    meta: DatabaseMeta
    references: dict[UtteranceId, str | None] = field(default_factory=dict)
    embedding_paths: dict[UtteranceId, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def conversation_ids(self) -> list[str]:
        return sorted(self.conversations)

    def conversation_records(self, conversation_id: str) -> list[ContextRecord]:
        if conversation_id not in self.conversations:
            raise ConversationNotFoundError(f"unknown conversation {conversation_id!r}")
        return [self.records[UtteranceId(conversation_id, i)] for i in self.conversations[conversation_id]]

    def ordered_ids(self) -> list[UtteranceId]:
        """All utterance ids, conversations sorted, causal order within each."""
        out: list[UtteranceId] = []
        for conv in self.conversation_ids():
            out.extend(UtteranceId(conv, i) for i in self.conversations[conv])
        return out


def build_database(
    manifest_path: str | Path,
    embedder: TextEmbedder,
    base_dir: str | Path | None = None,
) -> ContextDatabase:
    """Ingest a manifest plus its embedding payloads into a database.

    base_dir overrides where embedding_path values are resolved; it defaults
    to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    base = Path(base_dir) if base_dir is not None else manifest_path.parent
    rows = read_manifest(manifest_path)
    return build_database_from_rows(rows, embedder, base)


def build_database_from_rows(
    rows: list[ManifestRow], embedder: TextEmbedder, base_dir: str | Path
) -> ContextDatabase:
    base = Path(base_dir)
    records: dict[UtteranceId, ContextRecord] = {}
    conversations: dict[str, list[int]] = {}
    references: dict[UtteranceId, str | None] = {}
    embedding_paths: dict[UtteranceId, str] = {}
    speech_dim: int | None = None

    for row in rows:
        payload_path = base / row.embedding_path
        if not payload_path.is_file():
            raise IngestionError(f"utterance {row.id}: embedding payload {payload_path} not found")
        frames = read_payload(payload_path)
        if speech_dim is None:
            speech_dim = frames.shape[1]
        elif frames.shape[1] != speech_dim:
            raise PayloadFormatError(
                f"utterance {row.id}: embedding dim {frames.shape[1]} != database dim {speech_dim}"
            )
        speech = SpeechEmbedding(frames.astype(np.float64))
        pooled = speech.frames.mean(axis=0)
        text_vec = embed_text(embedder, row.hypothesis, utterance_id=row.id)
        records[row.id] = ContextRecord(
            id=row.id,
            speech=speech,
            hypothesis=row.hypothesis,
            language=row.language,
            pooled=pooled,
            text_vec=text_vec,
        )
        references[row.id] = row.reference
        embedding_paths[row.id] = row.embedding_path
        conversations.setdefault(row.id.conversation_id, []).append(row.id.index)

    if speech_dim is None:
        raise ManifestError("manifest contains no rows")
    for indices in conversations.values():
        indices.sort()
    meta = DatabaseMeta(speech_dim=speech_dim, text_dim=embedder.dim, embedder_id=embedder.id)
    return ContextDatabase(
        records=records,
        conversations=conversations,
        meta=meta,
        references=references,
        embedding_paths=embedding_paths,
    )


def history_of(db: ContextDatabase, current: UtteranceId) -> list[ContextRecord]:
    """All records before current in its conversation, increasing index order."""
    indices = db.conversations.get(current.conversation_id)
    if indices is None:
        raise ConversationNotFoundError(f"unknown conversation {current.conversation_id!r}")
    cut = bisect.bisect_left(indices, current.index)
    conv = current.conversation_id
    return [db.records[UtteranceId(conv, i)] for i in indices[:cut]]


def rebuild_with_hypotheses(
    db: ContextDatabase, hypotheses: dict[UtteranceId, str], embedder: TextEmbedder
) -> ContextDatabase:
    """New database with replaced hypotheses; text vectors are recomputed.

    Speech embeddings and pooled caches are shared (immutable arrays).
    Utterances absent from hypotheses keep their old hypothesis.
    """
    records: dict[UtteranceId, ContextRecord] = {}
    for uid, rec in db.records.items():
        hyp = hypotheses.get(uid, rec.hypothesis)
        records[uid] = ContextRecord(
            id=uid,
            speech=rec.speech,
            hypothesis=hyp,
            language=rec.language,
            pooled=rec.pooled,
            text_vec=embed_text(embedder, hyp, utterance_id=uid),
        )
    meta = DatabaseMeta(speech_dim=db.meta.speech_dim, text_dim=embedder.dim, embedder_id=embedder.id)
    return ContextDatabase(
        records=records,
        conversations={c: list(ix) for c, ix in db.conversations.items()},
        meta=meta,
        references=dict(db.references),
        embedding_paths=dict(db.embedding_paths),
    )


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def _safe_payload_name(uid: UtteranceId) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in uid.conversation_id)
    tag = format(fnv1a64(uid.conversation_id) & 0xFFFFFFFF, "08x")
    return f"{safe}_{tag}_{uid.index:06d}.emb"


def save_database(db: ContextDatabase, out_dir: str | Path) -> Path:
    """Persist a database directory; returns the directory path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[ManifestRow] = []
    text_vecs: list[np.ndarray] = []
    for uid in db.ordered_ids():
        rec = db.records[uid]
        rel = f"{_EMB_DIR}/{_safe_payload_name(uid)}"
        write_payload(out / rel, rec.speech.frames)
        rows.append(
            ManifestRow(
                id=uid,
                language=rec.language,
                hypothesis=rec.hypothesis,
                reference=db.references.get(uid),
                embedding_path=rel,
            )
        )
        vec = rec.text_vec
        if vec is None:
            raise PayloadFormatError(f"record {uid} has no cached text vector; cannot persist")
        text_vecs.append(vec)
    write_manifest(out / _MANIFEST_NAME, rows)
    # float64 .npy keeps reload bit-identical to the embedder's output
    np.save(out / _TEXTVEC_NAME, np.stack(text_vecs).astype(np.float64))
    meta = {
        "format_version": db.meta.format_version,
        "speech_dim": db.meta.speech_dim,
        "text_dim": db.meta.text_dim,
        "embedder_id": db.meta.embedder_id,
    }
    (out / _META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_database(db_dir: str | Path) -> ContextDatabase:
    """Load a persisted database; no embedder needed (text vectors cached)."""
    db_dir = Path(db_dir)
    meta_path = db_dir / _META_NAME
    if not meta_path.is_file():
        raise IngestionError(f"{db_dir} is not a saved database (missing {_META_NAME})")
    try:
        meta_raw = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PayloadFormatError(f"{meta_path}: invalid JSON ({exc})") from exc
    version = meta_raw.get("format_version")
    if version != FORMAT_VERSION:
        raise PayloadFormatError(f"{meta_path}: unsupported format_version {version}")
    meta = DatabaseMeta(
        speech_dim=int(meta_raw["speech_dim"]),
        text_dim=int(meta_raw["text_dim"]),
        embedder_id=str(meta_raw["embedder_id"]),
    )

    rows = read_manifest(db_dir / _MANIFEST_NAME)
    textvec_path = db_dir / _TEXTVEC_NAME
    if not textvec_path.is_file():
        raise IngestionError(f"{db_dir} is missing {_TEXTVEC_NAME}")
    vec_matrix = np.load(textvec_path)
    if vec_matrix.ndim != 2:
        raise PayloadFormatError(f"{textvec_path}: expected a 2-D vector matrix")
    if vec_matrix.shape[0] != len(rows):
        raise PayloadFormatError(
            f"{db_dir}: {vec_matrix.shape[0]} text vectors for {len(rows)} manifest rows"
        )
    if vec_matrix.shape[1] != meta.text_dim:
        raise PayloadFormatError(f"{db_dir}: text vector dim {vec_matrix.shape[1]} != meta {meta.text_dim}")

    records: dict[UtteranceId, ContextRecord] = {}
    conversations: dict[str, list[int]] = {}
    references: dict[UtteranceId, str | None] = {}
    embedding_paths: dict[UtteranceId, str] = {}
    for row, text_vec in zip(rows, vec_matrix):
        payload_path = db_dir / row.embedding_path
        if not payload_path.is_file():
            raise IngestionError(f"utterance {row.id}: embedding payload {payload_path} not found")
        frames = read_payload(payload_path)
        if frames.shape[1] != meta.speech_dim:
            raise PayloadFormatError(
                f"utterance {row.id}: embedding dim {frames.shape[1]} != meta {meta.speech_dim}"
            )
        speech = SpeechEmbedding(frames.astype(np.float64))
        text_vec = text_vec.copy()
        text_vec.setflags(write=False)
        records[row.id] = ContextRecord(
            id=row.id,
            speech=speech,
            hypothesis=row.hypothesis,
            language=row.language,
            pooled=speech.frames.mean(axis=0),
            text_vec=text_vec,
        )
        references[row.id] = row.reference
        embedding_paths[row.id] = row.embedding_path
        conversations.setdefault(row.id.conversation_id, []).append(row.id.index)
    for indices in conversations.values():
        indices.sort()
    return ContextDatabase(
        records=records,
        conversations=conversations,
        meta=meta,
        references=references,
        embedding_paths=embedding_paths,
    )
