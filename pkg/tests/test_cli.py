from __future__ import annotations

import json

import pytest

from convctx.cli import (
    EXIT_CONFIG,
    EXIT_INPUT,
    EXIT_OK,
    EXIT_PARTIAL,
    RunConfig,
    build_parser,
    main,
    read_config_file,
    read_decode_output,
)
from convctx.errors import ConfigurationError


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    spec = {
        "n_conversations": 3,
        "utterances_per_conversation": 6,
        "embedding_dim": 8,
        "frames_per_utterance": 8,
        "seed": 5,
    }
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = root / "corpus"
    assert main(["gen-corpus", "--spec", str(spec_path), "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def db_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_db") / "db"
    rc = main(["build-db", "--manifest", str(corpus_dir / "manifest.jsonl"), "--out", str(out)])
    assert rc == EXIT_OK
    return out


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


class TestRunConfig:
    def test_defaults_match_published_configuration(self):
        config = RunConfig()
        assert config.k == 3
        assert config.w_frame == 0.5 and config.w_utt == 0.5
        assert config.radius == 1
        assert config.mask_p == 0.5

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            RunConfig(k=0)
        with pytest.raises(ConfigurationError):
            RunConfig(w_frame=1.2)
        with pytest.raises(ConfigurationError):
            RunConfig(mer_mode="sum")

    def test_config_file_parsing(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nk = 5\nw-frame = 0.25\nbackend = mock\n")
        values = read_config_file(path)
        assert values == {"k": 5, "w_frame": 0.25, "backend": "mock"}

    def test_config_file_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("verbosity = 3\n")
        with pytest.raises(ConfigurationError):
            read_config_file(path)

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("k = 5\nseed = 9\n")
        args = build_parser().parse_args(
            ["decode", "--db", "x", "--mode", "direct", "--config", str(path), "--k", "7"]
        )
        from convctx.cli import build_config

        config = build_config(args)
        assert config.k == 7
        assert config.seed == 9


class TestParser:
    def test_unknown_flag_exits_with_usage(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["decode", "--db", "x", "--mode", "direct", "--frobnicate"])
        assert exc.value.code == 2

    def test_unknown_mode_rejected(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["decode", "--db", "x", "--mode", "psychic"])
        assert exc.value.code == 2


class TestDecodeCommand:
    def test_direct_single_utterance_corpus(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_conversations": 1, "utterances_per_conversation": 1, "seed": 1}))
        corpus = tmp_path / "corpus"
        main(["gen-corpus", "--spec", str(spec), "--out", str(corpus)])
        out = tmp_path / "decoded.jsonl"
        rc = main(["decode", "--db", str(corpus), "--mode", "direct", "-o", str(out)])
        assert rc == EXIT_OK
        rows = read_jsonl(out)
        assert rows[0]["record"] == "config"
        decode_rows = [r for r in rows if r["record"] == "decode"]
        assert len(decode_rows) == 1
        assert decode_rows[0]["context_used"] is None

    @pytest.mark.parametrize("mode", ["direct", "mars", "two-pass", "preceding-n", "sum-top1", "speech-only", "text-only"])
    def test_all_modes_run(self, db_dir, tmp_path, mode):
        out = tmp_path / f"{mode}.jsonl"
        rc = main(["decode", "--db", str(db_dir), "--mode", mode, "-o", str(out)])
        assert rc == EXIT_OK
        rows = read_decode_output(out)
        assert len(rows) == 18
        assert all("transcription" in r for r in rows)

    def test_conversation_filter(self, db_dir, tmp_path):
        out = tmp_path / "one.jsonl"
        rc = main(["decode", "--db", str(db_dir), "--mode", "direct", "--conversation", "conv0001", "-o", str(out)])
        assert rc == EXIT_OK
        rows = read_decode_output(out)
        assert {r["conversation_id"] for r in rows} == {"conv0001"}

    def test_workers_flag_gives_identical_output(self, db_dir, tmp_path):
        a = tmp_path / "w1.jsonl"
        b = tmp_path / "w4.jsonl"
        assert main(["decode", "--db", str(db_dir), "--mode", "mars", "-o", str(a)]) == EXIT_OK
        assert main(["decode", "--db", str(db_dir), "--mode", "mars", "--workers", "4", "-o", str(b)]) == EXIT_OK
        a_rows = [json.loads(l) for l in a.read_text().splitlines()]
        b_rows = [json.loads(l) for l in b.read_text().splitlines()]
        a_rows[0].pop("workers") != b_rows[0].pop("workers")
        assert a_rows == b_rows

    def test_config_echo_in_header(self, db_dir, tmp_path):
        out = tmp_path / "echo.jsonl"
        main(["decode", "--db", str(db_dir), "--mode", "direct", "--k", "5", "--seed", "42", "-o", str(out)])
        header = read_jsonl(out)[0]
        assert header["record"] == "config"
        assert header["k"] == 5 and header["seed"] == 42

    def test_missing_db_is_config_error(self, tmp_path):
        rc = main(["decode", "--db", str(tmp_path / "nowhere"), "--mode", "direct"])
        assert rc == EXIT_CONFIG


class TestRetrieveSelect:
    def test_retrieve_lists_completed_candidates(self, db_dir, tmp_path):
        out = tmp_path / "cands.jsonl"
        rc = main(["retrieve", "--db", str(db_dir), "--utterance", "conv0000#5", "-o", str(out)])
        assert rc == EXIT_OK
        rows = [r for r in read_jsonl(out) if r["record"] == "candidate"]
        assert 1 <= len(rows) <= 6
        for row in rows:
            assert row["sw"] is not None and row["tw"] is not None
            assert row["source"] in ("speech", "text")

    def test_select_emits_full_ranking(self, db_dir, tmp_path):
        out = tmp_path / "ranking.jsonl"
        rc = main(["select", "--db", str(db_dir), "--utterance", "conv0000#5", "-o", str(out)])
        assert rc == EXIT_OK
        rows = [r for r in read_jsonl(out) if r["record"] == "ranking"]
        assert sum(r["selected"] for r in rows) == 1
        for row in rows:
            assert set(row) >= {"id", "sw", "tw", "sr", "tr", "d_plus", "d_minus", "closeness", "selected"}

    def test_select_on_first_utterance_is_empty(self, db_dir, tmp_path):
        out = tmp_path / "empty.jsonl"
        rc = main(["select", "--db", str(db_dir), "--utterance", "conv0000#0", "-o", str(out)])
        assert rc == EXIT_OK
        assert [r["record"] for r in read_jsonl(out)] == ["config"]

    def test_unknown_utterance_is_config_error(self, db_dir):
        assert main(["select", "--db", str(db_dir), "--utterance", "conv0000#99"]) == EXIT_CONFIG


class TestScoreCommand:
    def test_mars_beats_direct_on_synthetic_corpus(self, corpus_dir, db_dir, tmp_path):
        manifest = str(corpus_dir / "manifest.jsonl")
        mers = {}
        for mode in ("direct", "mars"):
            decoded = tmp_path / f"{mode}.jsonl"
            scored = tmp_path / f"{mode}_score.jsonl"
            assert main(["decode", "--db", str(db_dir), "--mode", mode, "-o", str(decoded)]) == EXIT_OK
            assert main(["score", "--decoded", str(decoded), "--manifest", manifest, "-o", str(scored)]) == EXIT_OK
            mers[mode] = [r for r in read_jsonl(scored) if r["record"] == "mer"][0]["mer"]
        assert mers["mars"] < mers["direct"]

    def test_micro_and_macro_modes(self, corpus_dir, db_dir, tmp_path):
        manifest = str(corpus_dir / "manifest.jsonl")
        decoded = tmp_path / "d.jsonl"
        main(["decode", "--db", str(db_dir), "--mode", "direct", "-o", str(decoded)])
        outs = {}
        for mode in ("macro", "micro"):
            scored = tmp_path / f"{mode}.jsonl"
            assert (
                main(["score", "--decoded", str(decoded), "--manifest", manifest, "--mer-mode", mode, "-o", str(scored)])
                == EXIT_OK
            )
            outs[mode] = [r for r in read_jsonl(scored) if r["record"] == "mer"][0]
        assert outs["macro"]["mode"] == "macro"
        assert outs["micro"]["mode"] == "micro"

    def test_bad_decode_file_is_input_error(self, corpus_dir, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n")
        rc = main(["score", "--decoded", str(bad), "--manifest", str(corpus_dir / "manifest.jsonl")])
        assert rc != EXIT_OK


class TestMaskCommand:
    def test_mask_output_schema_and_probability_extremes(self, corpus_dir, tmp_path):
        manifest = str(corpus_dir / "manifest.jsonl")
        none_out = tmp_path / "p0.jsonl"
        all_out = tmp_path / "p1.jsonl"
        assert main(["mask", "--manifest", manifest, "--mask-p", "0", "-o", str(none_out)]) == EXIT_OK
        assert main(["mask", "--manifest", manifest, "--mask-p", "1", "-o", str(all_out)]) == EXIT_OK
        rows_p0 = [r for r in read_jsonl(none_out) if r["record"] == "training"]
        rows_p1 = [r for r in read_jsonl(all_out) if r["record"] == "training"]
        assert len(rows_p0) == len(rows_p1) == 18
        assert not any(r["masked"] for r in rows_p0)
        assert all(r["masked"] and r["context_hypothesis"] is None for r in rows_p1)
        assert all(r["target"] for r in rows_p0)

    def test_masking_depends_only_on_seed(self, corpus_dir, tmp_path):
        manifest = str(corpus_dir / "manifest.jsonl")
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        main(["mask", "--manifest", manifest, "--seed", "3", "-o", str(a)])
        main(["mask", "--manifest", manifest, "--seed", "3", "-o", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestBenchCommand:
    def test_reports_latency_summary(self, db_dir, tmp_path):
        out = tmp_path / "bench.jsonl"
        rc = main(["bench", "--db", str(db_dir), "-o", str(out)])
        assert rc == EXIT_OK
        summary = [r for r in read_jsonl(out) if r["record"] == "bench"][0]
        assert summary["utterances"] == 6
        assert summary["median_ms"] > 0


class TestExitCodes:
    def test_partial_failure_exit(self, tmp_path, embedder):
        # one manifest row without a reference: the mock backend fails on it
        from convctx.database import ManifestRow, write_manifest, write_payload
        from convctx.records import UtteranceId
        import numpy as np

        rows = []
        for i, ref in enumerate(["ok text", None]):
            rel = f"embeddings/c_{i}.emb"
            write_payload(tmp_path / rel, np.ones((3, 2), dtype=np.float32))
            rows.append(ManifestRow(UtteranceId("c", i), "en", f"hyp {i}", ref, rel))
        write_manifest(tmp_path / "manifest.jsonl", rows)
        out = tmp_path / "decoded.jsonl"
        rc = main(["decode", "--db", str(tmp_path), "--mode", "direct", "-o", str(out)])
        assert rc == EXIT_PARTIAL
        rows = read_decode_output(out)
        assert rows[1].get("error")

    def test_invalid_manifest_exit(self, tmp_path):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text('{"conversation_id": "c"}\n')
        assert main(["build-db", "--manifest", str(manifest), "--out", str(tmp_path / "db")]) == EXIT_INPUT

    def test_invalid_config_exit(self, db_dir):
        assert main(["decode", "--db", str(db_dir), "--mode", "direct", "--k", "0"]) == EXIT_CONFIG

    def test_gen_corpus_bad_spec_exit(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text('{"gap_min": 9, "gap_max": 1}')
        assert main(["gen-corpus", "--spec", str(spec), "--out", str(tmp_path / "c")]) == EXIT_CONFIG
