"""Tests for the command-line surface: configs, rows, train/eval/grid."""

import hashlib
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from seqcls.bpe import load_vocabulary
from seqcls.cli import (
    RESULTS_FIELDS,
    ResultsRow,
    RunConfig,
    best_rows,
    cmd_eval,
    cmd_grid,
    cmd_pretrain,
    cmd_synth,
    cmd_tokenizer,
    cmd_train,
    main,
    prepare,
    read_results,
    write_results,
)
from seqcls.data import LabeledSample, load_jsonl, split
from seqcls.encoder import save_embeddings
from seqcls.errors import DataError, ParameterError
from seqcls.model import ModelConfig, init_model, save_checkpoint
from seqcls.optim import evaluate


class FakeClock:
    """Deterministic stand-in for perf_counter: +0.5 per call."""

    def __init__(self):
        self.now = 0.0

    def __call__(self):
        self.now += 0.5
        return self.now


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    cmd_synth(2, 20, seed=1, out=path)
    return path


def small_config(corpus, out_dir, **overrides) -> RunConfig:
    fields = dict(
        data=str(corpus), out_dir=str(out_dir), schema="generic",
        lr=1e-2, epochs=2, batch_size=8, optimizer="adamw", seed=0,
        rnn="gru", hidden_units=4, d_rnn=4, dense_units=4, dropout=0.1,
        max_len=12, d_model=8, n_heads=2, n_layers=1, vocab_size=300)
    fields.update(overrides)
    return RunConfig(**fields)


class TestRunConfig:
    def test_internal_mode_fills_encoder_defaults(self, tmp_path):
        config = RunConfig(data="x", out_dir=str(tmp_path))
        assert (config.max_len, config.d_model, config.n_heads,
                config.n_layers, config.vocab_size) == (64, 64, 4, 2, 512)
        assert config.embedding_source == "internal"
        assert config.model_tag == "encoder+gru"

    def test_imported_mode_forbids_encoder_flags(self, tmp_path):
        with pytest.raises(ParameterError, match="--d-model"):
            RunConfig(data="x", out_dir=str(tmp_path), embeddings="e.sqf1",
                      d_model=32)
        with pytest.raises(ParameterError, match="freeze"):
            RunConfig(data="x", out_dir=str(tmp_path), embeddings="e.sqf1",
                      freeze_encoder=True)

    def test_imported_mode_tags_and_source(self, tmp_path):
        config = RunConfig(data="", out_dir=str(tmp_path),
                           embeddings="e.sqf1", rnn="bilstm")
        assert config.embedding_source == "imported:e.sqf1"
        assert config.model_tag == "imported+bilstm"
        assert config.max_len is None

    def test_mean_head_variant_tag(self, tmp_path):
        config = RunConfig(data="x", out_dir=str(tmp_path), head="mean")
        assert config.variant_tag == "mean"

    def test_dict_round_trip(self, tmp_path):
        config = small_config("c.jsonl", tmp_path, rnn="bigru", seed=5)
        payload = config.to_dict()
        assert payload["embedding_source"] == "internal"
        assert RunConfig.from_dict(payload) == config

    def test_bad_names_rejected(self, tmp_path):
        with pytest.raises(ParameterError):
            RunConfig(data="x", out_dir=str(tmp_path), rnn="transformer")
        with pytest.raises(ParameterError):
            RunConfig(data="x", out_dir=str(tmp_path), head="cls")


class TestResultsRows:
    def row(self, **overrides):
        fields = dict(
            model="encoder+gru", variant="gru", lr=1e-4, optimizer="adamw",
            hidden_units=32, dropout=0.1, split="test", accuracy=0.75,
            precision_weighted=0.8, recall_weighted=0.75, f1_weighted=2 / 3,
            precision_macro=0.7, recall_macro=0.6, f1_macro=0.65,
            wall_seconds=1.5, seed=0)
        fields.update(overrides)
        return ResultsRow(**fields)

    def test_fields_use_six_decimals(self):
        fields = self.row().as_fields()
        assert fields[2] == "0.000100"
        assert fields[7] == "0.750000"
        assert fields[10] == "0.666667"
        assert fields[-1] == "ok"
        assert len(fields) == len(RESULTS_FIELDS)

    def test_failed_rows_leave_metrics_empty(self):
        row = self.row(accuracy=None, precision_weighted=None,
                       recall_weighted=None, f1_weighted=None,
                       precision_macro=None, recall_macro=None,
                       f1_macro=None, wall_seconds=None,
                       status="error:DataError")
        fields = row.as_fields()
        assert fields[7:15] == [""] * 8
        assert fields[-1] == "error:DataError"

    def test_write_appends_header_once(self, tmp_path):
        path = tmp_path / "r.csv"
        write_results(path, [self.row()])
        write_results(path, [self.row(split="val")])
        rows = read_results(path)
        assert [r["split"] for r in rows] == ["test", "val"]
        text = path.read_text()
        assert text.count("model,variant") == 1

    def test_best_rows_pick_both_criteria(self):
        a = self.row(lr=1e-3, accuracy=0.9, f1_weighted=0.5)
        b = self.row(lr=1e-4, accuracy=0.8, f1_weighted=0.7)
        c = self.row(variant="lstm", model="encoder+lstm", accuracy=0.6,
                     f1_weighted=0.6)
        winners = best_rows([a, b, c])
        assert [(crit, r.variant, r.lr) for crit, r in winners] == [
            ("accuracy", "gru", 1e-3), ("f1_weighted", "gru", 1e-4),
            ("accuracy", "lstm", 1e-4), ("f1_weighted", "lstm", 1e-4)]


class TestTokenizerCommand:
    def test_saved_vocabulary_reloads_equal(self, corpus, tmp_path):
        out = tmp_path / "vocab.txt"
        vocab = cmd_tokenizer(corpus, "generic", 300, out)
        assert load_vocabulary(out) == vocab

    def test_rerun_is_byte_identical(self, corpus, tmp_path):
        first = tmp_path / "a.txt"
        second = tmp_path / "b.txt"
        cmd_tokenizer(corpus, "generic", 300, first)
        cmd_tokenizer(corpus, "generic", 300, second)
        assert first.read_bytes() == second.read_bytes()

    def test_vocab_size_below_base_alphabet_fails(self, corpus, tmp_path):
        with pytest.raises(ParameterError):
            cmd_tokenizer(corpus, "generic", 10, tmp_path / "v.txt")


class TestSynthCommand:
    def test_output_loads_as_generic_jsonl(self, tmp_path):
        path = tmp_path / "synth.jsonl"
        count = cmd_synth(2, 15, seed=3, out=path)
        loaded = load_jsonl(path, schema="generic")
        assert count == len(loaded.samples) == 30
        assert loaded.label_map == {"0": 0, "1": 1}


class TestTrainCommand:
    def test_run_directory_artifacts(self, corpus, tmp_path):
        config = small_config(corpus, tmp_path / "run", epochs=1)
        rows = cmd_train(config, clock=FakeClock())
        out = Path(config.out_dir)
        for name in ("config.json", "vocab.txt", "splits.json",
                     "manifest.json", "log.tsv", "model.ckpt",
                     "results.csv"):
            assert (out / name).exists(), name
        assert [r.split for r in rows] == ["train", "val", "test"]
        assert all(r.status == "ok" for r in rows)
        saved = read_results(out / "results.csv")
        assert [r["split"] for r in saved] == ["train", "val", "test"]
        config_echo = json.loads((out / "config.json").read_text())
        assert RunConfig.from_dict(config_echo) == config

    def test_manifest_records_input_hash(self, corpus, tmp_path):
        config = small_config(corpus, tmp_path / "run", epochs=1)
        cmd_train(config, clock=FakeClock())
        manifest = json.loads(
            (Path(config.out_dir) / "manifest.json").read_text())
        digest = hashlib.sha256(Path(corpus).read_bytes()).hexdigest()
        assert manifest["inputs"] == {str(corpus): digest}
        assert manifest["config"]["seed"] == 0

    def test_zero_lr_run_equals_untrained_model(self, corpus, tmp_path):
        config = small_config(corpus, tmp_path / "run", lr=0.0, epochs=1)
        rows = cmd_train(config, clock=FakeClock())
        prepared = prepare(config)
        untrained = init_model(prepared.model_config, config.seed)
        baseline = evaluate(untrained, prepared.examples["test"],
                            prepared.model_config.n_classes)
        test_row = rows[2]
        assert test_row.accuracy == baseline.accuracy
        assert test_row.f1_weighted == baseline.f1_weighted

    def test_same_seed_reruns_are_byte_identical(self, corpus, tmp_path):
        config_a = small_config(corpus, tmp_path / "a")
        config_b = small_config(corpus, tmp_path / "b")
        rows_a = cmd_train(config_a, clock=FakeClock())
        rows_b = cmd_train(config_b, clock=FakeClock())
        assert rows_a == rows_b
        assert (Path(config_a.out_dir) / "model.ckpt").read_bytes() == \
            (Path(config_b.out_dir) / "model.ckpt").read_bytes()
        assert (Path(config_a.out_dir) / "results.csv").read_bytes() == \
            (Path(config_b.out_dir) / "results.csv").read_bytes()

    def test_different_seed_changes_the_checkpoint(self, corpus, tmp_path):
        config_a = small_config(corpus, tmp_path / "a", epochs=1)
        config_b = small_config(corpus, tmp_path / "b", epochs=1, seed=3)
        cmd_train(config_a, clock=FakeClock())
        cmd_train(config_b, clock=FakeClock())
        assert (Path(config_a.out_dir) / "model.ckpt").read_bytes() != \
            (Path(config_b.out_dir) / "model.ckpt").read_bytes()


class TestEvalCommand:
    def test_eval_reproduces_train_test_row(self, corpus, tmp_path):
        config = small_config(corpus, tmp_path / "run")
        rows = cmd_train(config, clock=FakeClock())
        row = cmd_eval(Path(config.out_dir) / "model.ckpt", None, "test",
                       clock=FakeClock())
        train_test = rows[2]
        for name in ("model", "variant", "lr", "optimizer", "hidden_units",
                     "dropout", "split", "accuracy", "precision_weighted",
                     "recall_weighted", "f1_weighted", "precision_macro",
                     "recall_macro", "f1_macro", "seed", "status"):
            assert getattr(row, name) == getattr(train_test, name), name

    def test_eval_twice_is_identical(self, corpus, tmp_path, capsys):
        config = small_config(corpus, tmp_path / "run", epochs=1)
        cmd_train(config, clock=FakeClock())
        checkpoint = Path(config.out_dir) / "model.ckpt"
        first = cmd_eval(checkpoint, None, "val", clock=FakeClock())
        out_first = capsys.readouterr().out
        second = cmd_eval(checkpoint, None, "val", clock=FakeClock())
        out_second = capsys.readouterr().out
        assert first == second
        assert out_first == out_second
        assert "accuracy:" in out_first

    def test_class_count_mismatch_is_a_data_error(self, corpus, tmp_path):
        config = small_config(corpus, tmp_path / "run", epochs=1)
        cmd_train(config, clock=FakeClock())
        other = tmp_path / "three.jsonl"
        cmd_synth(3, 12, seed=2, out=other)
        with pytest.raises(DataError, match="classes"):
            cmd_eval(Path(config.out_dir) / "model.ckpt", other, "test")

    def test_missing_run_config_is_a_data_error(self, tmp_path):
        checkpoint = tmp_path / "model.ckpt"
        checkpoint.write_bytes(b"SQCK")
        with pytest.raises(DataError, match="config"):
            cmd_eval(checkpoint, None, "test")

    def test_forced_predictions_reproduce_worked_metrics(self, tmp_path):
        # 35 samples: 24 of class 0, 11 of class 1; the seeded split puts
        # 3 + 1 in test.  Prediction is forced by the sign of the first
        # feature, arranged so the test confusion matrix is [[2,1],[0,1]].
        seed = 9
        labels = [0] * 24 + [1] * 11
        placeholders = [
            LabeledSample(code=f"<imported {i}>", label=lbl, source_id=str(i))
            for i, lbl in enumerate(labels)]
        splits = split(placeholders, seed)
        predicted = {s.source_id: s.label for s in placeholders}
        test_zero = [s for s in splits.test if s.label == 0]
        test_one = [s for s in splits.test if s.label == 1]
        assert (len(test_zero), len(test_one)) == (3, 1)
        for sample, pred in zip(test_zero, (0, 0, 1)):
            predicted[sample.source_id] = pred
        predicted[test_one[0].source_id] = 1
        matrices = [
            (np.array([[1.0 if predicted[str(i)] == 0 else -1.0, 0.0]]), lbl)
            for i, lbl in enumerate(labels)]
        embeddings = tmp_path / "fixture.sqf1"
        save_embeddings(embeddings, matrices)

        run_dir = tmp_path / "run"
        run_dir.mkdir()
        run_config = RunConfig(
            data="", out_dir=str(run_dir), schema="generic", seed=seed,
            head="mean", d_rnn=2, dense_units=2, dropout=0.0,
            embeddings=str(embeddings))
        (run_dir / "config.json").write_text(
            json.dumps(run_config.to_dict(), sort_keys=True))
        bundle = init_model(ModelConfig(
            n_classes=2, embedding_source="imported", input_dim=2,
            head_kind="mean", d_rnn=2, dense_units=2, dropout=0.0), seed=0)
        bundle.bridge.w.data = np.eye(2)
        bundle.bridge.b.data = np.zeros(2)
        bundle.head.w_dense.data = np.eye(2)
        bundle.head.b_dense.data = np.zeros(2)
        bundle.head.w_out.data = np.array([[2.0, 0.0], [0.0, 0.0]])
        bundle.head.b_out.data = np.array([0.0, 1.0])
        save_checkpoint(run_dir / "model.ckpt", bundle)

        row = cmd_eval(run_dir / "model.ckpt", None, "test",
                       clock=FakeClock())
        assert row.accuracy == pytest.approx(0.75, abs=1e-12)
        assert row.f1_weighted == pytest.approx(0.7666667, abs=1e-6)
        assert row.f1_macro == pytest.approx(0.7894737, abs=1e-6)


class TestGridCommand:
    def test_single_cell_grid_yields_one_row(self, corpus, tmp_path):
        base = small_config(corpus, tmp_path / "grid", epochs=1)
        rows, winners, failed = cmd_grid(
            base, [1e-2], [0.1], [4], ["gru"], clock=FakeClock())
        assert len(rows) == 1 and failed == 0
        assert rows[0].split == "test" and rows[0].status == "ok"
        assert [crit for crit, _ in winners] == ["accuracy", "f1_weighted"]
        saved = read_results(tmp_path / "grid" / "grid.csv")
        assert len(saved) == 1

    def test_grid_rows_cover_the_product_sorted(self, corpus, tmp_path):
        base = small_config(corpus, tmp_path / "grid", epochs=1)
        rows, winners, failed = cmd_grid(
            base, [1e-2, 1e-3], [0.1], [4, 8], ["lstm", "gru"],
            clock=FakeClock())
        assert len(rows) == 8 and failed == 0
        keys = [(r.variant, r.optimizer, r.lr, r.hidden_units) for r in rows]
        assert keys == sorted(keys)
        assert {r.variant for r in rows} == {"gru", "lstm"}
        # one best-by-accuracy and one best-by-f1 row per (variant, optimizer)
        assert len(winners) == 4

    def test_failed_runs_are_flagged_and_grid_continues(self, corpus, tmp_path):
        base = small_config(corpus, tmp_path / "grid", epochs=1)
        rows, _, failed = cmd_grid(
            base, [1e-2], [0.1], [4, 0], ["gru"], clock=FakeClock())
        assert len(rows) == 2 and failed == 1
        by_hidden = {r.hidden_units: r for r in rows}
        assert by_hidden[4].status == "ok"
        assert by_hidden[0].status.startswith("error:")
        assert by_hidden[0].accuracy is None

    def test_rerun_writes_identical_grid_csv(self, corpus, tmp_path):
        base_a = small_config(corpus, tmp_path / "a", epochs=1)
        base_b = small_config(corpus, tmp_path / "b", epochs=1)
        cmd_grid(base_a, [1e-2], [0.1], [4], ["gru", "lstm"],
                 clock=FakeClock())
        cmd_grid(base_b, [1e-2], [0.1], [4], ["gru", "lstm"],
                 clock=FakeClock())
        assert (tmp_path / "a" / "grid.csv").read_bytes() == \
            (tmp_path / "b" / "grid.csv").read_bytes()
        assert (tmp_path / "a" / "best.csv").read_bytes() == \
            (tmp_path / "b" / "best.csv").read_bytes()

    def test_cardinality_counts_failed_rows(self, tmp_path):
        base = RunConfig(data=str(tmp_path / "missing.jsonl"),
                         out_dir=str(tmp_path / "grid"))
        lrs = [1e-2, 1e-3, 3e-4, 1e-4]
        dropouts = [0.0, 0.1, 0.2]
        hiddens = [16, 32, 64]
        variants = ["vanilla", "lstm", "gru", "bigru"]
        rows, winners, failed = cmd_grid(base, lrs, dropouts, hiddens,
                                         variants)
        assert len(rows) == 4 * 3 * 3 * 4 == 144
        assert failed == 144
        assert winners == []
        saved = read_results(tmp_path / "grid" / "grid.csv")
        assert len(saved) == 144

    def test_parallel_workers_match_serial_rows(self, corpus, tmp_path):
        base_serial = small_config(corpus, tmp_path / "serial", epochs=1)
        base_parallel = small_config(corpus, tmp_path / "parallel", epochs=1)
        serial, _, _ = cmd_grid(base_serial, [1e-2], [0.1], [4],
                                ["gru", "lstm"])
        parallel, _, _ = cmd_grid(base_parallel, [1e-2], [0.1], [4],
                                  ["gru", "lstm"], workers=2)
        for a, b in zip(serial, parallel):
            assert replace(a, wall_seconds=0.0) == replace(b, wall_seconds=0.0)


class TestPretrainCommand:
    def test_pretrain_exports_importable_embeddings(self, corpus, tmp_path):
        out = tmp_path / "pre"
        path = cmd_pretrain(corpus, "generic", out, vocab_size=300,
                            max_len=12, d_model=8, n_heads=2, n_layers=1,
                            steps=3, lr=1e-3, seed=0, mask_rate=0.3)
        assert path.exists()
        log = (out / "pretrain_log.tsv").read_text().splitlines()
        assert log[0] == "step\tloss"
        assert len(log) > 1
        config = RunConfig(data="", out_dir=str(tmp_path / "run"),
                           epochs=1, lr=1e-2, batch_size=8,
                           hidden_units=4, d_rnn=4, dense_units=4,
                           embeddings=str(path))
        rows = cmd_train(config, clock=FakeClock())
        assert rows[2].model == "imported+gru"
        assert rows[2].status == "ok"


class TestMainEntry:
    def test_synth_then_train_exits_zero(self, tmp_path, capsys):
        data = tmp_path / "c.jsonl"
        assert main(["synth", "--classes", "2", "--per-class", "15",
                     "--seed", "1", "--out", str(data)]) == 0
        code = main([
            "train", "--data", str(data), "--out-dir", str(tmp_path / "run"),
            "--epochs", "1", "--lr", "0.01", "--rnn", "gru",
            "--hidden-units", "4", "--d-rnn", "4", "--dense-units", "4",
            "--max-len", "12", "--d-model", "8", "--n-heads", "2",
            "--n-layers", "1", "--vocab-size", "300", "--batch-size", "8"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("encoder+gru") == 3

    def test_missing_data_file_gives_single_line_diagnosis(self, tmp_path,
                                                           capsys):
        code = main(["train", "--data", str(tmp_path / "nope.jsonl"),
                     "--out-dir", str(tmp_path / "run")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("seqcls:")
        assert len(err.strip().splitlines()) == 1

    def test_conflicting_flags_give_single_line_diagnosis(self, tmp_path,
                                                          capsys):
        code = main(["train", "--data", "x.jsonl",
                     "--out-dir", str(tmp_path / "run"),
                     "--embeddings", "e.sqf1", "--d-model", "32"])
        assert code == 1
        err = capsys.readouterr().err
        assert "ParameterError" in err

    def test_tokenizer_entry_round_trips(self, corpus, tmp_path, capsys):
        out = tmp_path / "vocab.txt"
        assert main(["tokenizer", "--data", str(corpus), "--schema",
                     "generic", "--vocab-size", "300", "--out",
                     str(out)]) == 0
        assert load_vocabulary(out) is not None

    def test_eval_entry_appends_results(self, corpus, tmp_path, capsys):
        run_dir = tmp_path / "run"
        config = small_config(corpus, run_dir, epochs=1)
        cmd_train(config, clock=FakeClock())
        results = tmp_path / "eval.csv"
        code = main(["eval", "--checkpoint", str(run_dir / "model.ckpt"),
                     "--split", "test", "--results", str(results)])
        assert code == 0
        rows = read_results(results)
        assert len(rows) == 1 and rows[0]["split"] == "test"
