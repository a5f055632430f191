"""Command-line surface for the retrieval-and-selection pipeline.

Every command is deterministic given (inputs, config, seed), and every
output starts with one config-echo record for provenance. Exit codes:
0 success, 2 usage, 3 input format, 4 configuration, 5 backend,
6 partial per-utterance failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

from convctx.database import (
    ContextDatabase,
    build_database,
    load_database,
    read_manifest,
    save_database,
)
from convctx.decoding import (
    DecodeResult,
    build_training_examples,
    decode_direct,
    decode_mars,
    decode_preceding_n,
    decode_single_modality,
    decode_sum_top1,
    decode_two_pass,
    make_backend,
    mask_contexts,
)
from convctx.embedder import make_embedder
from convctx.errors import (
    BackendError,
    ConfigurationError,
    EngineError,
    ManifestError,
    SelectionError,
)
from convctx.hashing import substream_seed
from convctx.kernels import SpeechSimilarityWeights
from convctx.metrics import MER_MACRO, MER_MICRO, ScoreReport, mixed_error_rate
from convctx.records import UtteranceId
from convctx.retrieval import complete_similarities, retrieve_speech_topk, retrieve_text_topk
from convctx.selection import rank_candidates
from convctx.synthetic import CorpusSpec, generate_corpus, write_corpus

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CONFIG = 4
EXIT_BACKEND = 5
EXIT_PARTIAL = 6

DECODE_MODES = ("direct", "mars", "two-pass", "preceding-n", "sum-top1", "speech-only", "text-only")


@dataclass(frozen=True)
class RunConfig:
    k: int = 3
    w_frame: float = 0.5
    radius: int = 1
    mask_p: float = 0.5
    seed: int = 0
    workers: int = 1
    embedder: str = "reference"
    backend: str = "mock"
    mer_mode: str = MER_MACRO

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.radius < 1:
            raise ConfigurationError(f"radius must be >= 1, got {self.radius}")
        if not 0.0 <= self.w_frame <= 1.0:
            raise ConfigurationError(f"w-frame must lie in [0,1], got {self.w_frame}")
        if not 0.0 <= self.mask_p <= 1.0:
            raise ConfigurationError(f"mask-p must lie in [0,1], got {self.mask_p}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.mer_mode not in (MER_MACRO, MER_MICRO):
            raise ConfigurationError(f"mer-mode must be macro or micro, got {self.mer_mode!r}")

    @property
    def w_utt(self) -> float:
        return 1.0 - self.w_frame

    @property
    def weights(self) -> SpeechSimilarityWeights:
        return SpeechSimilarityWeights.from_frame_weight(self.w_frame)

    def echo(self) -> dict:
        return {
            "record": "config",
            "k": self.k,
            "w_frame": self.w_frame,
            "w_utt": self.w_utt,
            "radius": self.radius,
            "mask_p": self.mask_p,
            "seed": self.seed,
            "workers": self.workers,
            "embedder": self.embedder,
            "backend": self.backend,
            "mer_mode": self.mer_mode,
        }


_CONFIG_TYPES = {f.name: f.type for f in fields(RunConfig)}


def read_config_file(path: str | Path) -> dict:
    """Flat key-value config: 'key = value' per line, # comments."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in _CONFIG_TYPES:
            raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
        kind = _CONFIG_TYPES[key]
        try:
            if kind == "int":
                values[key] = int(value)
            elif kind == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then explicit flags override."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _CONFIG_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return RunConfig(**values)


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------


def _open_database(path: str | Path, config: RunConfig) -> tuple[ContextDatabase, Path]:
    """Accept a saved database dir, a corpus dir, or a manifest file."""
    p = Path(path)
    if p.is_dir():
        if (p / "meta.json").is_file():
            return load_database(p), p
        manifest = p / "manifest.jsonl"
        if manifest.is_file():
            return build_database(manifest, make_embedder(config.embedder)), p
        raise ConfigurationError(f"{p} holds neither meta.json nor manifest.jsonl")
    if p.is_file():
        return build_database(p, make_embedder(config.embedder)), p.parent
    raise ConfigurationError(f"database path {p} does not exist")


def _emit(out: str | None, records: list[dict]) -> None:
    text = "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records)
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _get_record(db: ContextDatabase, utterance: str):
    uid = UtteranceId.parse(utterance)
    record = db.records.get(uid)
    if record is None:
        raise ConfigurationError(f"utterance {uid} is not in the database")
    return record


def _completed_candidates(db: ContextDatabase, record, config: RunConfig):
    embedder = make_embedder(config.embedder)
    speech = retrieve_speech_topk(db, record, config.k, config.weights, config.radius)
    text = retrieve_text_topk(db, record, config.k, embedder)
    return complete_similarities(speech + text, record, config.weights, config.radius, embedder)


def _decode_row(result: DecodeResult) -> dict:
    row = {
        "record": "decode",
        "conversation_id": result.id.conversation_id,
        "index": result.id.index,
        "transcription": result.transcription,
        "context_used": result.context_used,
        "closeness": result.closeness,
    }
    if result.error is not None:
        row["error"] = result.error
    return row


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_gen_corpus(args: argparse.Namespace, config: RunConfig) -> int:
    raw = {}
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.spec}: invalid JSON ({exc})") from exc
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = CorpusSpec.from_dict(raw)
    corpus = generate_corpus(spec)
    out = write_corpus(corpus, args.out)
    n_utts = len(corpus.rows)
    print(f"wrote {spec.n_conversations} conversations / {n_utts} utterances to {out}")
    return EXIT_OK


def cmd_build_db(args: argparse.Namespace, config: RunConfig) -> int:
    embedder = make_embedder(config.embedder)
    db = build_database(args.manifest, embedder)
    save_database(db, args.out)
    print(f"built database: {len(db)} records, d={db.meta.speech_dim}, e={db.meta.text_dim} -> {args.out}")
    return EXIT_OK


def cmd_retrieve(args: argparse.Namespace, config: RunConfig) -> int:
    db, _ = _open_database(args.db, config)
    record = _get_record(db, args.utterance)
    candidates = _completed_candidates(db, record, config)
    rows = [config.echo()]
    for cand in candidates:
        rows.append(
            {
                "record": "candidate",
                "id": str(cand.record.id),
                "sw": cand.sw,
                "tw": cand.tw,
                "source": cand.source,
            }
        )
    _emit(args.out, rows)
    return EXIT_OK


def cmd_select(args: argparse.Namespace, config: RunConfig) -> int:
    db, _ = _open_database(args.db, config)
    record = _get_record(db, args.utterance)
    candidates = _completed_candidates(db, record, config)
    rows = [config.echo()]
    if candidates:
        matrix, ranking = rank_candidates(candidates)
        for i, cand in enumerate(candidates):
            rows.append(
                {
                    "record": "ranking",
                    "id": str(cand.record.id),
                    "sw": cand.sw,
                    "tw": cand.tw,
                    "sr": float(matrix.sr[i]),
                    "tr": float(matrix.tr[i]),
                    "d_plus": float(ranking.d_plus[i]),
                    "d_minus": float(ranking.d_minus[i]),
                    "closeness": float(ranking.c[i]),
                    "selected": i == ranking.best_index,
                }
            )
    _emit(args.out, rows)
    return EXIT_OK


def cmd_decode(args: argparse.Namespace, config: RunConfig) -> int:
    db, base_dir = _open_database(args.db, config)
    backend = make_backend(config.backend, db, base_dir, config.seed)
    embedder = make_embedder(config.embedder)
    conversations = [args.conversation] if args.conversation else db.conversation_ids()
    weights = config.weights

    results: list[DecodeResult] = []
    if args.mode == "two-pass":
        results = decode_two_pass(
            db, backend, embedder, config.k, weights, config.radius, config.workers, conversations
        )
    else:
        for conv in conversations:
            if args.mode == "direct":
                results.extend(decode_direct(db, conv, backend, config.workers))
            elif args.mode == "mars":
                results.extend(
                    decode_mars(db, conv, backend, config.k, weights, config.radius, embedder, config.workers)
                )
            elif args.mode == "preceding-n":
                results.extend(decode_preceding_n(db, conv, backend, args.n, config.workers))
            elif args.mode == "sum-top1":
                results.extend(
                    decode_sum_top1(db, conv, backend, config.k, weights, config.radius, embedder, config.workers)
                )
            elif args.mode in ("speech-only", "text-only"):
                modality = args.mode.split("-")[0]
                results.extend(
                    decode_single_modality(
                        db, conv, backend, modality, config.k, weights, config.radius, embedder, config.workers
                    )
                )
            else:
                raise ConfigurationError(f"unknown decode mode {args.mode!r}")

    rows = [config.echo()] + [_decode_row(r) for r in results]
    _emit(args.out, rows)
    if any(r.error is not None for r in results):
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_mask(args: argparse.Namespace, config: RunConfig) -> int:
    embedder = make_embedder(config.embedder)
    db = build_database(args.manifest, embedder)
    examples = build_training_examples(db, config.k, config.weights, config.radius, embedder)
    masked = mask_contexts(examples, config.mask_p, substream_seed(config.seed, "mask"))
    rows = [config.echo()]
    for ex in masked:
        rows.append(
            {
                "record": "training",
                "conversation_id": ex.bundle.utterance_ref.conversation_id,
                "index": ex.bundle.utterance_ref.index,
                "language_prompt": ex.bundle.language_prompt,
                "context_hypothesis": ex.bundle.context_hypothesis,
                "current_hypothesis": ex.bundle.current_hypothesis,
                "target": ex.target,
                "masked": ex.masked,
            }
        )
    _emit(args.out, rows)
    return EXIT_OK


def read_decode_output(path: str | Path) -> list[dict]:
    """Decode rows from a decode output file, config headers skipped."""
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid decode record ({exc})") from exc
            if row.get("record") == "decode":
                rows.append(row)
    return rows


def score_decode_output(decoded_path: str | Path, manifest_path: str | Path, mode: str) -> ScoreReport:
    """Join decode output with manifest references and score per language.

    Utterances without a reference are skipped; failed utterances score as
    empty hypotheses (pure deletions).
    """
    manifest = {row.id: row for row in read_manifest(manifest_path)}
    groups: dict[str, tuple[list[str], list[str]]] = {}
    for row in read_decode_output(decoded_path):
        uid = UtteranceId(str(row["conversation_id"]), int(row["index"]))
        mrow = manifest.get(uid)
        if mrow is None or mrow.reference is None:
            continue
        refs, hyps = groups.setdefault(mrow.language, ([], []))
        refs.append(mrow.reference)
        hyps.append(row.get("transcription") or "")
    return mixed_error_rate(groups, mode)


def cmd_score(args: argparse.Namespace, config: RunConfig) -> int:
    report = score_decode_output(args.decoded, args.manifest, config.mer_mode)
    rows = [config.echo()]
    for s in report.languages:
        rows.append(
            {
                "record": "language_score",
                "language": s.language,
                "metric": s.metric,
                "error_rate": s.error_rate,
                "n_ref_tokens": s.n_ref_tokens,
                "n_errors": s.n_errors,
            }
        )
    rows.append({"record": "mer", "mode": report.mode, "mer": report.mer})
    _emit(args.out, rows)
    # human-readable summary; stderr when stdout carries the record stream
    sink = sys.stdout if args.out not in (None, "-") else sys.stderr
    for s in report.languages:
        print(f"{s.language:>8}  {s.metric.upper()}  {100 * s.error_rate:6.2f}%  ({s.n_ref_tokens} ref tokens)", file=sink)
    print(f"     MER  {report.mode}  {100 * report.mer:6.2f}%", file=sink)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: RunConfig) -> int:
    db, _ = _open_database(args.db, config)
    conversations = [args.conversation] if args.conversation else db.conversation_ids()[:1]
    embedder = make_embedder(config.embedder)

    def query(record) -> None:
        speech = retrieve_speech_topk(db, record, config.k, config.weights, config.radius)
        text = retrieve_text_topk(db, record, config.k, embedder)
        candidates = complete_similarities(speech + text, record, config.weights, config.radius, embedder)
        if candidates:
            rank_candidates(candidates)

    # warm the JIT caches so compile time does not pollute the report
    query(db.conversation_records(conversations[0])[-1])
    timings_ms: list[float] = []
    for conv in conversations:
        for record in db.conversation_records(conv):
            start = time.perf_counter()
            query(record)
            timings_ms.append(1000.0 * (time.perf_counter() - start))
    timings_sorted = sorted(timings_ms)
    summary = {
        "record": "bench",
        "utterances": len(timings_ms),
        "median_ms": statistics.median(timings_sorted),
        "p90_ms": timings_sorted[int(0.9 * (len(timings_sorted) - 1))],
        "max_ms": timings_sorted[-1],
        "total_s": sum(timings_ms) / 1000.0,
    }
    _emit(args.out, [config.echo(), summary])
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("run configuration")
    group.add_argument("--config", help="flat key = value config file; flags override it")
    group.add_argument("--seed", type=int, default=None)
    group.add_argument("--k", type=int, default=None, help="top-K per modality (default 3)")
    group.add_argument("--w-frame", dest="w_frame", type=float, default=None, help="frame-level weight (default 0.5)")
    group.add_argument("--radius", type=int, default=None, help="FastDTW radius (default 1)")
    group.add_argument("--mask-p", dest="mask_p", type=float, default=None, help="context mask probability (default 0.5)")
    group.add_argument("--workers", type=int, default=None, help="parallel utterance decodes (default 1)")
    group.add_argument("--mer-mode", dest="mer_mode", choices=(MER_MACRO, MER_MICRO), default=None)
    group.add_argument("--backend", default=None, help="'mock' or 'external:<endpoint>'")
    group.add_argument("--embedder", default=None, help="'reference' or 'precomputed:<path>'")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convctx", description=__doc__)
    parent = _config_parent()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[parent], help="generate a synthetic corpus")
    p.add_argument("--spec", help="JSON corpus spec file (defaults apply if omitted)")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("build-db", parents=[parent], help="ingest a manifest into a database directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("retrieve", parents=[parent], help="list completed retrieval candidates")
    p.add_argument("--db", required=True)
    p.add_argument("--utterance", required=True, help="conversation_id#index")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("select", parents=[parent], help="emit the near-ideal ranking for one utterance")
    p.add_argument("--db", required=True)
    p.add_argument("--utterance", required=True, help="conversation_id#index")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("decode", parents=[parent], help="decode a database with a backend")
    p.add_argument("--db", required=True)
    p.add_argument("--mode", required=True, choices=DECODE_MODES)
    p.add_argument("--conversation", default=None, help="restrict to one conversation")
    p.add_argument("--n", type=int, default=1, help="context count for preceding-n")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("mask", parents=[parent], help="emit masked training examples")
    p.add_argument("--manifest", required=True)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("score", parents=[parent], help="score decode output against references")
    p.add_argument("--decoded", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench", parents=[parent], help="time retrieval + selection")
    p.add_argument("--db", required=True)
    p.add_argument("--conversation", default=None)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
        return args.func(args, config)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except SelectionError as exc:
        print(f"selection error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EngineError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
