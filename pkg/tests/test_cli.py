"""Config parsing and end-to-end CLI tests on a desk-scale synthetic graph."""

import json

import numpy as np
import pytest

from dygraphdistill.cli import main
from dygraphdistill.config import ExperimentConfig, load_config, parse_config_text
from dygraphdistill.errors import ConfigError
from dygraphdistill.reporting import read_csv

TINY_CONFIG = """
# desk-scale synthetic run
dataset = synthetic
synth_n = 40
synth_communities = 2
synth_p_in = 0.4
synth_p_out = 0.02
synth_T = 6
synth_churn = 0.3
m = 3

teacher_dim = 8
teacher_heads = 2
student_dim = 4
student_window = 2
student_heads = 2

gamma = 0.3
candidate_set_size = 8
epochs = 6
walk_len = 6
walks_per_node = 2
context = 2
eval_seeds = 3
seed = 0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


class TestConfigParsing:
    def test_defaults_and_types(self):
        cfg = parse_config_text(TINY_CONFIG)
        assert cfg.synth_n == 40 and cfg.gamma == 0.3 and cfg.dataset == "synthetic"
        assert cfg.lr == 1e-3 and cfg.w_neg == 1.0  # untouched defaults
        assert cfg.effective_teacher_window == 3
        assert cfg.effective_teacher_epochs == 6

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("gammma = 0.5")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("gamma = 0.4\ngamma = 0.5")

    def test_bad_value_reported_with_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("gamma = 0.4\nepochs = soon")

    def test_invariants_validated(self):
        with pytest.raises(ConfigError):
            parse_config_text("gamma = 1.5")
        with pytest.raises(ConfigError):
            parse_config_text("distill_mode = osmosis")

    def test_overrides_take_effect(self, config_file):
        cfg = load_config(config_file, overrides={"gamma": 0.7, "student_window": 1})
        assert cfg.gamma == 0.7 and cfg.student_window == 1

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("# only comments\n\n  # more\n")
        assert cfg == ExperimentConfig()


class TestIngestCommand:
    def test_three_line_file(self, tmp_path, capsys):
        src = tmp_path / "edges.tsv"
        src.write_text("a\tb\t0\nb\tc\t10\nc\td\t20\n", encoding="utf-8")
        out = tmp_path / "graph"
        code = main(["ingest", "--input", str(src), "--bucket-width", "10",
                     "--out", str(out), "--split", "1"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["snapshot_count"] == 3
        stdout = capsys.readouterr().out
        assert "3 snapshots" in stdout
        assert stdout.count("snapshot") >= 3

    def test_reingest_preserves_content_hash(self, tmp_path):
        src = tmp_path / "edges.tsv"
        src.write_text("a\tb\t0\nb\tc\t10\n", encoding="utf-8")
        first = tmp_path / "first"
        second = tmp_path / "second"
        assert main(["ingest", "--input", str(src), "--bucket-width", "10",
                     "--out", str(first)]) == 0
        assert main(["ingest", "--input", str(first / "manifest.json"),
                     "--out", str(second)]) == 0
        h1 = json.loads((first / "manifest.json").read_text())["content_hash"]
        h2 = json.loads((second / "manifest.json").read_text())["content_hash"]
        assert h1 == h2

    def test_parse_error_exits_2(self, tmp_path, capsys):
        src = tmp_path / "bad.tsv"
        src.write_text("a\tb\tnot_a_timestamp\n", encoding="utf-8")
        code = main(["ingest", "--input", str(src), "--bucket-width", "10",
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "line 1" in capsys.readouterr().err


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    """One full tiny run shared by the assertions below."""
    base = tmp_path_factory.mktemp("run")
    cfg_path = base / "experiment.cfg"
    cfg_path.write_text(TINY_CONFIG, encoding="utf-8")
    out = base / "out"
    code = main(["run", "--config", str(cfg_path), "--out", str(out)])
    return code, out, cfg_path


class TestRunCommand:
    def test_exit_zero_and_outputs_exist(self, completed_run):
        code, out, _ = completed_run
        assert code == 0
        for name in ("eval_report.csv", "training_log_teacher.csv",
                     "training_log_student.csv", "manifest.json",
                     "teacher.npz", "student.npz"):
            assert (out / name).exists(), name
        for fig in ("auc_by_step.png", "training_loss.png", "params_by_step.png"):
            assert (out / "figures" / fig).exists(), fig

    def test_report_has_one_row_per_model_and_online_step(self, completed_run):
        _, out, _ = completed_run
        header, rows = read_csv(out / "eval_report.csv")
        assert header == ["model", "time_step", "auc_mean", "auc_std",
                          "params", "ratio_vs_teacher"]
        by_model = {}
        for row in rows:
            by_model.setdefault(row[0], []).append(int(row[1]))
        # T=6, m=3 -> 3 online steps.
        assert by_model["teacher"] == [1, 2, 3]
        assert by_model["student"] == [1, 2, 3]
        for row in rows:
            assert 0.0 <= float(row[2]) <= 1.0
            if row[0] == "teacher":
                assert float(row[5]) == 1.0
            else:
                assert float(row[5]) < 1.0

    def test_manifest_records_config_and_hash(self, completed_run):
        _, out, _ = completed_run
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["synth_n"] == 40
        assert len(manifest["input_hash"]) == 64
        assert manifest["outputs"]["eval_report"] == "eval_report.csv"

    def test_rerun_is_bit_identical(self, completed_run, tmp_path):
        _, out, cfg_path = completed_run
        out2 = tmp_path / "again"
        assert main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 0
        assert (out / "eval_report.csv").read_bytes() == (out2 / "eval_report.csv").read_bytes()

    def test_gamma_override_changes_student_only(self, completed_run, tmp_path):
        from dygraphdistill.model import AttentionModel

        _, out, cfg_path = completed_run
        out2 = tmp_path / "gamma0"
        assert main(["run", "--config", str(cfg_path), "--gamma", "0.0",
                     "--out", str(out2)]) == 0
        _, rows_a = read_csv(out / "eval_report.csv")
        _, rows_b = read_csv(out2 / "eval_report.csv")
        assert [r for r in rows_a if r[0] == "teacher"] == \
               [r for r in rows_b if r[0] == "teacher"]
        # The blend reaches the optimizer: student parameters must move.
        student_a, _ = AttentionModel.load(out / "student.npz")
        student_b, _ = AttentionModel.load(out2 / "student.npz")
        assert any(not np.array_equal(student_a.store[n].data, student_b.store[n].data)
                   for n in student_a.store.names())
        # The teacher checkpoint is reproduced exactly.
        teacher_a, _ = AttentionModel.load(out / "teacher.npz")
        teacher_b, _ = AttentionModel.load(out2 / "teacher.npz")
        for n in teacher_a.store.names():
            np.testing.assert_array_equal(teacher_a.store[n].data, teacher_b.store[n].data)

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no_such_key = 1\n", encoding="utf-8")
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestSweepCommand:
    def test_gamma_sweep_rows_and_figure(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "experiment.cfg"
        cfg_path.write_text(TINY_CONFIG.replace("epochs = 6", "epochs = 3"),
                            encoding="utf-8")
        out = tmp_path / "sweep"
        monkeypatch.setenv("DYGRAPHDISTILL_WORKERS", "2")
        code = main(["sweep", "--config", str(cfg_path), "--axis", "gamma",
                     "--values", "0.0,0.3,0.6", "--out", str(out)])
        assert code == 0
        header, rows = read_csv(out / "sweep_gamma.csv")
        assert header == ["axis_value", "auc_mean", "auc_std", "params"]
        assert [r[0] for r in rows] == ["0.0", "0.3", "0.6"]
        assert (out / "figures" / "sweep_gamma.png").exists()
        for value in ("0.0", "0.3", "0.6"):
            assert (out / f"gamma_{value}" / "eval_report.csv").exists()

    def test_window_sweep(self, tmp_path):
        cfg_path = tmp_path / "experiment.cfg"
        cfg_path.write_text(TINY_CONFIG.replace("epochs = 6", "epochs = 2"),
                            encoding="utf-8")
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", str(cfg_path), "--axis", "window",
                     "--values", "1,2", "--no-figures", "--out", str(out)])
        assert code == 0
        _, rows = read_csv(out / "sweep_window.csv")
        assert len(rows) == 2
