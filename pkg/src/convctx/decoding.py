"""Decoding orchestration: direct, mars, two-pass, baselines, and masking.

Backends are pluggable behind a one-method contract. The mock backend makes
context quality measurable without any model: it corrupts reference tokens
at a seeded rate that drops sharply for tokens covered by the supplied
context hypothesis. External backends speak a line-oriented JSON protocol
over a subprocess pipe or HTTP POST.
"""

from __future__ import annotations

import itertools
import json
import random
import subprocess
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, runtime_checkable

from convctx.database import ContextDatabase, rebuild_with_hypotheses
from convctx.embedder import TextEmbedder
from convctx.errors import BackendError, ConfigurationError
from convctx.hashing import fnv1a64, substream_seed
from convctx.kernels import DEFAULT_RADIUS, DEFAULT_WEIGHTS, SpeechSimilarityWeights
from convctx.records import ContextRecord, UtteranceId
from convctx.retrieval import (
    DEFAULT_TOP_K,
    complete_similarities,
    retrieve_speech_topk,
    retrieve_text_topk,
)
from convctx.selection import rank_candidates, select_preceding_n, select_sum_top1

# One instruction, same meaning, per supported language tag.
LANGUAGE_PROMPTS: dict[str, str] = {
    "en": "Please transcribe the speech into text.",
    "fr": "Veuillez transcrire la parole en texte.",
    "de": "Bitte transkribieren Sie die Sprache in Text.",
    "it": "Si prega di trascrivere il parlato in testo.",
    "pt": "Por favor, transcreva a fala em texto.",
    "es": "Por favor, transcribe el habla en texto.",
    "ru": "Пожалуйста, транскрибируйте речь в текст.",
    "vi": "Vui lòng phiên âm giọng nói thành văn bản.",
    "ja": "音声をテキストに書き起こしてください。",
    "ko": "음성을 텍스트로 전사해 주세요.",
    "th": "โปรดถอดเสียงพูดเป็นข้อความ",
}

MOCK_CORRUPT_P = 0.15
MOCK_CONTEXT_CORRUPT_P = 0.02


def language_prompt(tag: str) -> str:
    """Prompt for a language tag; 'en-US' falls back to its primary subtag."""
    prompt = LANGUAGE_PROMPTS.get(tag)
    if prompt is None:
        prompt = LANGUAGE_PROMPTS.get(tag.split("-")[0].split("_")[0].lower())
    if prompt is None:
        raise ConfigurationError(f"no prompt registered for language tag {tag!r}")
    return prompt


@dataclass(frozen=True)
class PromptBundle:
    """The four backend inputs; context is absent when decoding directly."""

    language_prompt: str
    context_hypothesis: str | None
    current_hypothesis: str
    utterance_ref: UtteranceId


@dataclass(frozen=True)
class TrainingExample:
    bundle: PromptBundle
    target: str
    masked: bool = False


@dataclass(frozen=True)
class DecodeResult:
    id: UtteranceId
    transcription: str | None
    context_used: str | None = None  # utterance id string; comma-joined for multi-context modes
    closeness: float | None = None
    error: str | None = None


@runtime_checkable
class AsrBackend(Protocol):
    @property
    def id(self) -> str: ...

    def transcribe(self, bundle: PromptBundle) -> str: ...


def assemble_prompt(current: ContextRecord, best: ContextRecord | None) -> PromptBundle:
    """Bundle the language instruction, optional context, and hypothesis."""
    return PromptBundle(
        language_prompt=language_prompt(current.language),
        context_hypothesis=best.hypothesis if best is not None else None,
        current_hypothesis=current.hypothesis,
        utterance_ref=current.id,
    )


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------


class MockAsrBackend:
    """Reference backend: seeded corruption of the hidden reference.

    Each reference token is corrupted with probability corrupt_p, reduced to
    context_corrupt_p when the token appears in the context hypothesis. The
    RNG stream is derived from (seed, utterance id) only, so output is a pure
    function of the bundle and reference, independent of call order.
    """

    def __init__(
        self,
        references: Mapping[UtteranceId, str | None],
        seed: int = 0,
        corrupt_p: float = MOCK_CORRUPT_P,
        context_corrupt_p: float = MOCK_CONTEXT_CORRUPT_P,
    ):
        self._references = references
        self._seed = seed
        self._corrupt_p = corrupt_p
        self._context_corrupt_p = context_corrupt_p

    @property
    def id(self) -> str:
        return f"mock-s{self._seed}"

    def transcribe(self, bundle: PromptBundle) -> str:
        reference = self._references.get(bundle.utterance_ref)
        if reference is None:
            raise BackendError(f"mock backend has no reference for {bundle.utterance_ref}")
        rng = random.Random(fnv1a64(str(bundle.utterance_ref), seed=self._seed))
        context_tokens = set(bundle.context_hypothesis.split()) if bundle.context_hypothesis else set()
        out = []
        for pos, token in enumerate(reference.split()):
            p = self._context_corrupt_p if token in context_tokens else self._corrupt_p
            if rng.random() < p:
                out.append(f"{token}~{fnv1a64(f'{token}|{pos}', seed=self._seed) % 10}")
            else:
                out.append(token)
        return " ".join(out)


def _request_record(bundle: PromptBundle, request_id: str, embedding_path: str) -> dict:
    return {
        "request_id": request_id,
        "language_prompt": bundle.language_prompt,
        "context_hypothesis": bundle.context_hypothesis,
        "current_hypothesis": bundle.current_hypothesis,
        "embedding_path": embedding_path,
    }


def _parse_response(raw: str, request_id: str) -> str:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise BackendError(f"backend sent invalid JSON: {raw!r}") from exc
    if record.get("request_id") != request_id:
        raise BackendError(f"backend answered {record.get('request_id')!r} for request {request_id!r}")
    if record.get("error"):
        raise BackendError(f"backend error: {record['error']}")
    transcription = record.get("transcription")
    if not isinstance(transcription, str):
        raise BackendError(f"backend response has no transcription: {raw!r}")
    return transcription


class PipeBackend:
    """Line-oriented JSON adapter over a persistent subprocess.

    Requests are serialized through one lock: the protocol is in-order over
    a single pipe, so parallel decode workers take turns here.
    """

    def __init__(self, argv: list[str], resolve_path: Callable[[UtteranceId], str]):
        self._argv = argv
        self._resolve = resolve_path
        self._count = 0
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot start backend {argv!r}: {exc}") from exc

    @property
    def id(self) -> str:
        return f"pipe:{' '.join(self._argv)}"

    def transcribe(self, bundle: PromptBundle) -> str:
        with self._lock:
            self._count += 1
            request_id = f"{self._count}:{bundle.utterance_ref}"
            record = _request_record(bundle, request_id, self._resolve(bundle.utterance_ref))
            try:
                self._proc.stdin.write(json.dumps(record, ensure_ascii=False) + "\n")
                self._proc.stdin.flush()
                raw = self._proc.stdout.readline()
            except (OSError, ValueError) as exc:
                raise BackendError(f"backend pipe broke: {exc}") from exc
        if not raw:
            raise BackendError("backend closed its output stream")
        return _parse_response(raw, request_id)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self) -> "PipeBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class HttpBackend:
    """One JSON POST per utterance against an HTTP endpoint."""

    def __init__(self, url: str, resolve_path: Callable[[UtteranceId], str], timeout: float = 30.0):
        self._url = url
        self._resolve = resolve_path
        self._timeout = timeout
        self._counter = itertools.count(1)

    @property
    def id(self) -> str:
        return f"http:{self._url}"

    def transcribe(self, bundle: PromptBundle) -> str:
        request_id = f"{next(self._counter)}:{bundle.utterance_ref}"
        record = _request_record(bundle, request_id, self._resolve(bundle.utterance_ref))
        payload = json.dumps(record, ensure_ascii=False).encode("utf-8")
        request = urllib.request.Request(
            self._url, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self._timeout) as response:
                raw = response.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            raise BackendError(f"backend request failed: {exc}") from exc
        return _parse_response(raw, request_id)


def make_backend(
    spec: str,
    db: ContextDatabase,
    base_dir: str | Path | None = None,
    seed: int = 0,
) -> AsrBackend:
    """Build a backend from a CLI-style spec: 'mock' or 'external:<endpoint>'.

    An endpoint starting with http:// or https:// uses HTTP; anything else is
    run as a subprocess command line.
    """
    if spec == "mock":
        return MockAsrBackend(db.references, seed=substream_seed(seed, "backend"))
    if spec.startswith("external:"):
        endpoint = spec.split(":", 1)[1]
        if not endpoint:
            raise ConfigurationError("external backend spec needs an endpoint")
        base = Path(base_dir) if base_dir is not None else Path(".")

        def resolve(uid: UtteranceId) -> str:
            rel = db.embedding_paths.get(uid, "")
            return str(base / rel) if rel else ""

        if endpoint.startswith(("http://", "https://")):
            return HttpBackend(endpoint, resolve)
        return PipeBackend(endpoint.split(), resolve)
    raise ConfigurationError(f"unknown backend spec {spec!r} (use 'mock' or 'external:<endpoint>')")


# --------------------------------------------------------------------------
# Decoding passes
# --------------------------------------------------------------------------

# context_fn returns (context record(s) joined to one hypothesis or None,
# comma-joined source ids or None, closeness of the selected candidate or None)
ContextFn = Callable[[ContextRecord], tuple[str | None, str | None, float | None]]


def _join_contexts(contexts: list[ContextRecord]) -> tuple[str | None, str | None]:
    if not contexts:
        return None, None
    text = " ".join(rec.hypothesis for rec in contexts)
    ids = ",".join(str(rec.id) for rec in contexts)
    return text, ids


def _decode_conversation(
    db: ContextDatabase,
    conversation_id: str,
    backend: AsrBackend,
    context_fn: ContextFn,
    workers: int = 1,
) -> list[DecodeResult]:
    records = db.conversation_records(conversation_id)

    def decode_one(record: ContextRecord) -> DecodeResult:
        try:
            context_text, context_ids, score = context_fn(record)
            bundle = PromptBundle(
                language_prompt=language_prompt(record.language),
                context_hypothesis=context_text,
                current_hypothesis=record.hypothesis,
                utterance_ref=record.id,
            )
            transcription = backend.transcribe(bundle)
        except BackendError as exc:
            return DecodeResult(id=record.id, transcription=None, error=str(exc))
        return DecodeResult(
            id=record.id,
            transcription=transcription,
            context_used=context_ids,
            closeness=score,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(decode_one, records))
    return [decode_one(record) for record in records]


def decode_direct(
    db: ContextDatabase, conversation_id: str, backend: AsrBackend, workers: int = 1
) -> list[DecodeResult]:
    """Decode every utterance independently, without context."""
    return _decode_conversation(db, conversation_id, backend, lambda record: (None, None, None), workers)


def _mars_context(
    db: ContextDatabase,
    record: ContextRecord,
    k: int,
    weights: SpeechSimilarityWeights,
    radius: int,
    embedder: TextEmbedder | None,
) -> tuple[str | None, str | None, float | None]:
    speech_cands = retrieve_speech_topk(db, record, k, weights, radius)
    text_cands = retrieve_text_topk(db, record, k, embedder)
    candidates = complete_similarities(speech_cands + text_cands, record, weights, radius, embedder)
    if not candidates:
        return None, None, None
    _, ranking = rank_candidates(candidates)
    best = candidates[ranking.best_index]
    return best.record.hypothesis, str(best.record.id), float(ranking.c[ranking.best_index])


def decode_mars(
    db: ContextDatabase,
    conversation_id: str,
    backend: AsrBackend,
    k: int = DEFAULT_TOP_K,
    weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS,
    radius: int = DEFAULT_RADIUS,
    embedder: TextEmbedder | None = None,
    workers: int = 1,
) -> list[DecodeResult]:
    """Decode with the best retrieved-and-selected historical context.

    First utterances (empty history) decode context-free.
    """

    def context_fn(record: ContextRecord):
        return _mars_context(db, record, k, weights, radius, embedder)

    return _decode_conversation(db, conversation_id, backend, context_fn, workers)


def decode_preceding_n(
    db: ContextDatabase, conversation_id: str, backend: AsrBackend, n: int = 1, workers: int = 1
) -> list[DecodeResult]:
    """Baseline: the n immediately preceding utterances as joined context."""

    def context_fn(record: ContextRecord):
        contexts = select_preceding_n(db, record.id, n)
        text, ids = _join_contexts(contexts)
        return text, ids, None

    return _decode_conversation(db, conversation_id, backend, context_fn, workers)


def decode_single_modality(
    db: ContextDatabase,
    conversation_id: str,
    backend: AsrBackend,
    modality: str,
    k: int = DEFAULT_TOP_K,
    weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS,
    radius: int = DEFAULT_RADIUS,
    embedder: TextEmbedder | None = None,
    workers: int = 1,
) -> list[DecodeResult]:
    """Baseline: top-k contexts of one modality, joined, most similar first."""
    if modality not in ("speech", "text"):
        raise ConfigurationError(f"modality must be 'speech' or 'text', got {modality!r}")

    def context_fn(record: ContextRecord):
        if modality == "speech":
            cands = retrieve_speech_topk(db, record, k, weights, radius)
        else:
            cands = retrieve_text_topk(db, record, k, embedder)
        text, ids = _join_contexts([cand.record for cand in cands])
        return text, ids, None

    return _decode_conversation(db, conversation_id, backend, context_fn, workers)


def decode_sum_top1(
    db: ContextDatabase,
    conversation_id: str,
    backend: AsrBackend,
    k: int = DEFAULT_TOP_K,
    weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS,
    radius: int = DEFAULT_RADIUS,
    embedder: TextEmbedder | None = None,
    workers: int = 1,
) -> list[DecodeResult]:
    """Baseline: single context by argmax of sw + tw."""

    def context_fn(record: ContextRecord):
        speech_cands = retrieve_speech_topk(db, record, k, weights, radius)
        text_cands = retrieve_text_topk(db, record, k, embedder)
        candidates = complete_similarities(speech_cands + text_cands, record, weights, radius, embedder)
        if not candidates:
            return None, None, None
        best = select_sum_top1(candidates)
        return best.record.hypothesis, str(best.record.id), None

    return _decode_conversation(db, conversation_id, backend, context_fn, workers)


def decode_two_pass(
    db: ContextDatabase,
    backend: AsrBackend,
    embedder: TextEmbedder,
    k: int = DEFAULT_TOP_K,
    weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS,
    radius: int = DEFAULT_RADIUS,
    workers: int = 1,
    conversation_ids: list[str] | None = None,
) -> list[DecodeResult]:
    """Direct pass, database rebuild from pass-1 hypotheses, then mars pass.

    Any pass-1 utterance failure aborts before the rebuild: pass 2 must not
    run against a database with holes.
    """
    conversations = conversation_ids if conversation_ids is not None else db.conversation_ids()
    pass1: dict[UtteranceId, str] = {}
    for conv in conversations:
        for result in decode_direct(db, conv, backend, workers):
            if result.error is not None or result.transcription is None:
                raise BackendError(f"two-pass aborted: pass 1 failed on {result.id}: {result.error}")
            pass1[result.id] = result.transcription
    second_db = rebuild_with_hypotheses(db, pass1, embedder)
    results: list[DecodeResult] = []
    for conv in conversations:
        results.extend(decode_mars(second_db, conv, backend, k, weights, radius, embedder, workers))
    return results


# --------------------------------------------------------------------------
# Training-time context masking
# --------------------------------------------------------------------------


def build_training_examples(
    db: ContextDatabase,
    k: int = DEFAULT_TOP_K,
    weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS,
    radius: int = DEFAULT_RADIUS,
    embedder: TextEmbedder | None = None,
) -> list[TrainingExample]:
    """One example per utterance with a reference: best context + target."""
    examples: list[TrainingExample] = []
    for uid in db.ordered_ids():
        target = db.references.get(uid)
        if target is None:
            continue
        record = db.records[uid]
        context_text, _, _ = _mars_context(db, record, k, weights, radius, embedder)
        bundle = PromptBundle(
            language_prompt=language_prompt(record.language),
            context_hypothesis=context_text,
            current_hypothesis=record.hypothesis,
            utterance_ref=uid,
        )
        examples.append(TrainingExample(bundle=bundle, target=target, masked=False))
    return examples


def mask_contexts(examples: list[TrainingExample], p: float, seed: int) -> list[TrainingExample]:
    """Independently drop each example's context with probability p (seeded)."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"mask probability must lie in [0,1], got {p}")
    rng = random.Random(seed)
    out: list[TrainingExample] = []
    for example in examples:
        if rng.random() < p:
            out.append(
                TrainingExample(
                    bundle=replace(example.bundle, context_hypothesis=None),
                    target=example.target,
                    masked=True,
                )
            )
        else:
            out.append(example)
    return out
