"""
Tests for the command-line application
"""

import csv
import json
import os

import pytest

from unified_asr.app import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, UnifiedASRApp, cli_dispatch
from unified_asr.common import Config
from unified_asr.core.config_manager import ConfigManager
from unified_asr.core.checkpoint import load_checkpoint
from unified_asr.core.data import load_corpus
from unified_asr.core.decoding import read_nbest
from unified_asr.core.ngram import read_arpa


def _errors(mock_ui):
    return " ".join(str(call.args[0]) for call in mock_ui.show_error.call_args_list)


@pytest.mark.integration
class TestCommandLine:
    """Argument handling and exit codes"""

    def test_help_exits_cleanly(self, mock_ui):
        assert cli_dispatch(["--help"], mock_ui) == EXIT_OK
        assert cli_dispatch(["train", "--help"], mock_ui) == EXIT_OK

    def test_unknown_subcommand(self, mock_ui):
        assert cli_dispatch(["transcribe"], mock_ui) == EXIT_VALIDATION
        mock_ui.show_error.assert_called_once()
        mock_ui.cleanup.assert_called_once()

    def test_missing_required_flag(self, mock_ui):
        assert cli_dispatch(["decode", "--ckpt", "x.ckpt"], mock_ui) == EXIT_VALIDATION

    def test_chunk_zero_rejected(self, mock_ui, config_manager, temp_dir):
        code = cli_dispatch(["decode", "--config", config_manager.config_path, "--ckpt", "model.ckpt",
                             "--corpus", "test.jsonl", "--out", os.path.join(temp_dir, "n.jsonl"),
                             "--chunk", "0"], mock_ui)
        assert code == EXIT_VALIDATION
        assert "chunk must be ≥ 1 or 'full'" in _errors(mock_ui)

    def test_missing_config_file(self, mock_ui, temp_dir):
        code = cli_dispatch(["gen-data", "--config", os.path.join(temp_dir, "nope.json"),
                             "--out", temp_dir], mock_ui)
        assert code == EXIT_VALIDATION
        assert "config file not found" in _errors(mock_ui)

    def test_missing_checkpoint(self, mock_ui, config_manager, temp_dir):
        code = cli_dispatch(["avg-ckpt", "--config", config_manager.config_path,
                             os.path.join(temp_dir, "a.ckpt"), "--out", os.path.join(temp_dir, "b.ckpt")],
                            mock_ui)
        assert code == EXIT_VALIDATION

    def test_ui_failure(self, mock_ui):
        mock_ui.initialize.return_value = False
        assert UnifiedASRApp(mock_ui).run(["--help"]) == EXIT_RUNTIME

    def test_unexpected_errors_map_to_runtime(self, mock_ui, config_manager, temp_dir, mocker):
        mocker.patch("unified_asr.app.gen_corpus", side_effect=RuntimeError("disk on fire"))
        code = cli_dispatch(["gen-data", "--config", config_manager.config_path, "--out", temp_dir], mock_ui)
        assert code == EXIT_RUNTIME
        assert "disk on fire" in _errors(mock_ui)


@pytest.mark.integration
class TestConfigCommand:
    """Inspecting, editing and resetting config files"""

    def _summary(self, mock_ui):
        mock_ui.show_summary.assert_called_once()
        return mock_ui.show_summary.call_args.args[1]

    def test_show(self, mock_ui, config_manager, test_config):
        assert cli_dispatch(["config", "--config", config_manager.config_path], mock_ui) == EXIT_OK
        summary = self._summary(mock_ui)
        assert summary["seed"] == 3
        assert summary["log file"] == test_config.log_file
        assert summary["log size (bytes)"] > 0
        mock_ui.show_success.assert_called_once_with("Configuration is valid")

    def test_set_saves_dotted_keys(self, mock_ui, config_manager):
        code = cli_dispatch(["config", "--config", config_manager.config_path, "--set", "train.epochs=5",
                             "--set", "decode.chunk=null", "--set", "train.contrastive.bridge=l2"], mock_ui)
        assert code == EXIT_OK
        saved = ConfigManager(config_manager.config_path).config
        assert saved.train.epochs == 5
        assert saved.decode.chunk is None
        assert saved.train.contrastive.bridge == "l2"

    @pytest.mark.parametrize("assignment,message", [
        ("train.ctc_weight=1.5", "ctc_weight"),
        ("train.nonsense=1", "unknown config key"),
        ("train.contrastive={}", "section"),
        ("epochs", "KEY=VALUE"),
    ])
    def test_rejected_assignment_leaves_file_alone(self, mock_ui, config_manager, assignment, message):
        with open(config_manager.config_path, encoding="utf-8") as f:
            before = f.read()
        code = cli_dispatch(["config", "--config", config_manager.config_path, "--set", assignment], mock_ui)
        assert code == EXIT_VALIDATION
        assert message in _errors(mock_ui)
        with open(config_manager.config_path, encoding="utf-8") as f:
            assert f.read() == before

    def test_invalid_file_is_reported_then_reset(self, mock_ui, temp_dir):
        path = os.path.join(temp_dir, "broken.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"train": {"ctc_weight": 1.5}}, f)
        assert cli_dispatch(["config", "--config", path], mock_ui) == EXIT_VALIDATION
        assert "ctc_weight" in _errors(mock_ui)

        assert cli_dispatch(["config", "--config", path, "--reset"], mock_ui) == EXIT_OK
        assert ConfigManager(path).config == Config()

    def test_reset_creates_missing_file(self, mock_ui, temp_dir):
        path = os.path.join(temp_dir, "fresh.json")
        assert cli_dispatch(["config", "--config", path, "--reset", "--quiet"], mock_ui) == EXIT_OK
        assert os.path.exists(path)
        mock_ui.show_summary.assert_not_called()

    def test_clear_log(self, mock_ui, config_manager, test_config):
        os.makedirs(os.path.dirname(test_config.log_file), exist_ok=True)
        with open(test_config.log_file, "w", encoding="utf-8") as f:
            f.write("old run\n" * 50)
        code = cli_dispatch(["config", "--config", config_manager.config_path, "--clear-log"], mock_ui)
        assert code == EXIT_OK
        with open(test_config.log_file, encoding="utf-8") as f:
            text = f.read()
        assert "old run" not in text
        assert text.startswith("# Unified ASR log")

    def test_other_commands_reject_invalid_settings(self, mock_ui, temp_dir):
        path = os.path.join(temp_dir, "typed.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"train": {"epochs": "many"}}, f)
        code = cli_dispatch(["gen-data", "--config", path, "--out", temp_dir], mock_ui)
        assert code == EXIT_VALIDATION
        assert "wrong type" in _errors(mock_ui)


@pytest.mark.integration
class TestGenData:
    """Corpus generation subcommand"""

    def test_same_seed_same_files(self, mock_ui, config_manager, temp_dir):
        outputs = []
        for name in ("a", "b"):
            out = os.path.join(temp_dir, name)
            argv = ["gen-data", "--config", config_manager.config_path, "--seed", "5", "--out", out, "--quiet"]
            assert cli_dispatch(argv, mock_ui) == EXIT_OK
            files = []
            for split in ("train.jsonl", "test.jsonl"):
                with open(os.path.join(out, split), 'rb') as f:
                    files.append(f.read())
            outputs.append(files)
        assert outputs[0] == outputs[1]

    def test_flags_override_config(self, mock_ui, config_manager, test_config, temp_dir):
        argv = ["gen-data", "--config", config_manager.config_path, "--out", temp_dir,
                "--n-utts", "9", "--n-test", "2"]
        assert cli_dispatch(argv, mock_ui) == EXIT_OK
        vocab = test_config.model.vocab
        assert len(load_corpus(os.path.join(temp_dir, "train.jsonl"), vocab)) == 7
        assert len(load_corpus(os.path.join(temp_dir, "test.jsonl"), vocab)) == 2

        with open(os.path.join(temp_dir, "manifest.json")) as f:
            manifest = json.load(f)
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == test_config.seed
        assert manifest["config"]["data"]["n_utts"] == 9
        assert set(manifest["outputs"]) == {"train", "test"}
        mock_ui.show_header.assert_called_once_with("gen-data")

    def test_invalid_split(self, mock_ui, config_manager, temp_dir):
        argv = ["gen-data", "--config", config_manager.config_path, "--out", temp_dir,
                "--n-utts", "4", "--n-test", "4"]
        assert cli_dispatch(argv, mock_ui) == EXIT_VALIDATION


@pytest.mark.integration
class TestPipeline:
    """Every subcommand chained on a tiny configuration"""

    def test_end_to_end(self, mock_ui, config_manager, test_config, temp_dir):
        config = config_manager.config_path
        data = os.path.join(temp_dir, "data")
        run = os.path.join(temp_dir, "run")
        train_path = os.path.join(data, "train.jsonl")
        test_path = os.path.join(data, "test.jsonl")

        def ok(*argv):
            assert cli_dispatch(list(argv) + ["--config", config, "--quiet"], mock_ui) == EXIT_OK, _errors(mock_ui)

        ok("gen-data", "--out", data)
        ok("train", "--train", train_path, "--valid", test_path, "--out", run, "--bridge", "contrastive")
        checkpoints = os.path.join(run, "checkpoints")
        average = os.path.join(checkpoints, "average.ckpt")
        assert os.path.exists(average)
        assert os.path.exists(os.path.join(run, "manifest.json"))
        assert os.path.exists(os.path.join(run, "train_log.csv"))

        lm_path = os.path.join(temp_dir, "lm.arpa")
        ok("train-lm", "--corpus", train_path, "--order", "2", "--out", lm_path)
        lm = read_arpa(lm_path)
        assert lm.order == 2
        assert lm.vocab_size == test_config.model.vocab_size
        assert os.path.exists(lm_path + ".manifest.json")

        nbest = os.path.join(temp_dir, "nbest.jsonl")
        ok("decode", "--ckpt", average, "--corpus", test_path, "--out", nbest, "--chunk", "2", "--pass", "2",
           "--lm", lm_path, "--lm-weight", "0.3")
        results = read_nbest(nbest)
        assert len(results) == test_config.data.n_test
        assert all(h.aed_logscore is not None for r in results for h in r.hypotheses)
        with open(nbest + ".manifest.json") as f:
            manifest = json.load(f)
        assert manifest["config"]["decode"]["chunk"] == 2
        assert manifest["inputs"]["lm"] == lm_path

        cer_path = os.path.join(temp_dir, "cer.csv")
        ok("eval", "--nbest", nbest, "--corpus", test_path, "--out", cer_path)
        with open(cer_path) as f:
            rows = list(csv.DictReader(f))
        assert rows[0]["mode"] == "streaming"
        assert rows[0]["chunk"] == "2"
        assert rows[0]["pass"] == "2"
        assert float(rows[0]["cer"]) >= 0.0

        gap = os.path.join(temp_dir, "gap")
        ok("analyze-gap", "--ckpt", average, "--corpus", test_path, "--out", gap,
           "--chunks", "4,1", "--sample-size", "2")
        with open(os.path.join(gap, "gap.csv")) as f:
            assert [r["chunk"] for r in csv.DictReader(f)] == ["4", "1"]
        assert os.path.exists(os.path.join(gap, "projection.csv"))

        averaged = os.path.join(temp_dir, "avg.ckpt")
        epochs = [os.path.join(checkpoints, f"epoch_{e:03d}.ckpt") for e in (1, 2)]
        ok("avg-ckpt", *epochs, "--k", "2", "--out", averaged)
        assert load_checkpoint(averaged).config == test_config.model

        experiment = os.path.join(temp_dir, "experiment")
        ok("experiment", "--train", train_path, "--valid", test_path, "--test", test_path, "--out", experiment,
           "--bridges", "none,contrastive", "--chunks", "full,2", "--epochs", "1")
        with open(os.path.join(experiment, "report.md")) as f:
            assert "| bridge | pass | full | 2 |" in f.read()
        assert os.path.exists(os.path.join(experiment, "manifest.json"))

        with open(test_config.log_file) as f:
            log = f.read()
        assert "INFO (train): finished" in log

    def test_first_pass_file_cannot_be_scored_as_second(self, mock_ui, config_manager, temp_dir):
        config = config_manager.config_path
        data = os.path.join(temp_dir, "data")
        run = os.path.join(temp_dir, "run")
        test_path = os.path.join(data, "test.jsonl")
        nbest = os.path.join(temp_dir, "nbest.jsonl")
        steps = [
            ["gen-data", "--out", data],
            ["train", "--train", os.path.join(data, "train.jsonl"), "--out", run, "--epochs", "1"],
            ["decode", "--ckpt", os.path.join(run, "checkpoints", "average.ckpt"), "--corpus", test_path,
             "--out", nbest, "--pass", "1"],
        ]
        for argv in steps:
            assert cli_dispatch(argv + ["--config", config, "--quiet"], mock_ui) == EXIT_OK, _errors(mock_ui)

        cer_path = os.path.join(temp_dir, "cer.csv")
        argv = ["eval", "--nbest", nbest, "--corpus", test_path, "--out", cer_path, "--config", config]
        assert cli_dispatch(argv + ["--pass", "2"], mock_ui) == EXIT_VALIDATION
        assert "first-pass scores only" in _errors(mock_ui)
        assert cli_dispatch(argv, mock_ui) == EXIT_OK
        with open(cer_path) as f:
            assert next(csv.DictReader(f))["pass"] == "1"
