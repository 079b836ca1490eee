# ABOUTME: Unit tests for the qlrnn command-line entry point
# ABOUTME: Runs subcommands through main() and checks stdout, artifacts and exit codes

import json

import pytest

from qlrnn.cli import build_parser, main
from qlrnn.errors import EXIT_CONFIG, EXIT_OK


@pytest.fixture
def full_vocab_values():
    return {"d_emb": 512, "d_h": 512, "vocab_size": 50257, "n_classes": 2}


@pytest.mark.unit
class TestParser:
    """Tests for argument parsing."""

    def test_subcommands_registered(self):
        parser = build_parser()
        for command in ("train", "eval", "params", "gradflow", "bench"):
            args = parser.parse_args([command, "--config", "x.cfg"])
            assert args.command == command
            assert callable(args.handler)

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


@pytest.mark.unit
class TestParamsCommand:
    """Tests for `qlrnn params`."""

    @pytest.mark.parametrize(
        ("arch", "expected"),
        [("lstm", "27,831,810"), ("gru", "27,307,010"), ("bilstm", "29,932,034")],
    )
    def test_totals(self, write_config, full_vocab_values, capsys, arch, expected):
        path = write_config(arch=arch, **full_vocab_values)
        assert main(["params", "--config", str(path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert f"total_enumerated: {expected}" in out
        assert f"total_closed_form: {expected}" in out

    def test_size_and_artifact(self, write_config, full_vocab_values, tmp_path, capsys):
        path = write_config(arch="lstm", **full_vocab_values)
        assert main(["params", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "size_mb_s4: 106.17" in out
        assert (tmp_path / "o" / "params.txt").read_text(encoding="utf-8") == out


@pytest.mark.unit
class TestExitCodes:
    """Tests for error-to-exit-code mapping."""

    def test_invalid_value(self, write_config):
        path = write_config(lr=-1)
        assert main(["params", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert main(["params", "--config", str(tmp_path / "absent.cfg")]) == EXIT_CONFIG

    def test_bad_environment(self, write_config, monkeypatch):
        monkeypatch.setenv("QLRNN_LOG_LEVEL", "LOUD")
        assert main(["params", "--config", str(write_config())]) == EXIT_CONFIG

    def test_eval_without_checkpoint(self, write_config, toy_run_values, tmp_path):
        path = write_config(**toy_run_values)
        code = main(["eval", "--config", str(path), "--out", str(tmp_path / "empty")])
        assert code == EXIT_CONFIG


@pytest.mark.unit
class TestTrainAndEval:
    """Tests for `qlrnn train` and `qlrnn eval` on a toy distant-token run."""

    def test_train_is_deterministic(self, write_config, toy_run_values, tmp_path):
        path = write_config(**toy_run_values)
        for name in ("a", "b"):
            assert main(["train", "--config", str(path), "--out", str(tmp_path / name)]) == EXIT_OK
        for artifact in ("metrics.log", "best.ckpt.json", "eval_report.json"):
            first = (tmp_path / "a" / artifact).read_bytes()
            assert first == (tmp_path / "b" / artifact).read_bytes()
        lines = (tmp_path / "a" / "metrics.log").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("epoch=1 ")

    def test_seed_override_changes_run(self, write_config, toy_run_values, tmp_path):
        path = write_config(**toy_run_values)
        main(["train", "--config", str(path), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "4"])
        first = (tmp_path / "a" / "best.ckpt.json").read_bytes()
        assert first != (tmp_path / "b" / "best.ckpt.json").read_bytes()

    def test_eval_after_train(self, write_config, toy_run_values, tmp_path, capsys):
        path = write_config(**toy_run_values)
        out = tmp_path / "run"
        assert main(["train", "--config", str(path), "--out", str(out)]) == EXIT_OK
        capsys.readouterr()

        assert main(["eval", "--config", str(path), "--out", str(out)]) == EXIT_OK
        first = (out / "eval_val.json").read_text(encoding="utf-8")
        assert main(["eval", "--config", str(path), "--out", str(out)]) == EXIT_OK
        assert (out / "eval_val.json").read_text(encoding="utf-8") == first

        report = json.loads(first)
        assert report["n_examples"] == 8
        assert 0.0 <= report["accuracy"] <= 1.0
        assert report == json.loads((out / "eval_report.json").read_text(encoding="utf-8"))

    def test_eval_length_sweep(self, write_config, toy_run_values, tmp_path):
        path = write_config(**toy_run_values, eval_max_lens="4,12")
        out = tmp_path / "run"
        main(["train", "--config", str(path), "--out", str(out)])
        assert main(["eval", "--config", str(path), "--out", str(out)]) == EXIT_OK
        reports = json.loads((out / "eval_val.json").read_text(encoding="utf-8"))
        assert [r["n_examples"] for r in reports] == [8, 8]


@pytest.mark.unit
class TestGradflowCommand:
    """Tests for `qlrnn gradflow`."""

    def test_clamped_profile(self, write_config, tmp_path, capsys):
        path = write_config(
            arch="lstm", d_emb=3, d_h=4, vocab_size=257, dropout=0, clamp_forget=0.9, gradflow_len=6
        )
        assert main(["gradflow", "--config", str(path), "--out", str(tmp_path / "g")]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "distance,norm,analytic"
        assert len(lines) == 7
        for distance, line in enumerate(lines[1:]):
            cells = line.split(",")
            assert int(cells[0]) == distance
            assert float(cells[1]) == pytest.approx(0.9**distance, abs=1e-4)
            assert float(cells[2]) == pytest.approx(0.9**distance, rel=1e-12)
        assert (tmp_path / "g" / "gradflow.csv").exists()

    def test_loss_column_on_request(self, write_config, capsys):
        path = write_config(
            arch="lstm",
            d_emb=3,
            d_h=4,
            vocab_size=257,
            dropout=0,
            clamp_forget=0.9,
            gradflow_len=6,
            gradflow_loss="true",
        )
        assert main(["gradflow", "--config", str(path)]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "distance,norm,analytic,loss_grad"
        assert all(float(line.split(",")[3]) > 0.0 for line in lines[1:])
