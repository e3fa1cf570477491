from __future__ import annotations

import json

import pytest

from drawage.cli import main
from drawage.report import write_report_outputs, write_selection_outputs
from drawage.util import read_json, write_json


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli_corpus")
    assert main(["synth", "--out", str(path), "--per-group", "8", "--seed", "21"]) == 0
    return path


def _config_file(tmp_path, corpus_dir, **overrides):
    config = {
        "data_dir": str(corpus_dir),
        "classifier": "dba",
        "selection": "manual:V,Z,T",
        "seed": 5,
        "dba": {"max_iter": 8, "tol": 1e-3},
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    write_json(path, config)
    return path


class TestCommands:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["model_format"] == 1

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--nonsense"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_no_command_exits_2(self):
        assert main([]) == 2

    def test_synth_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--per-group", "2", "--seed", "3"]) == 0
        for pa in sorted(a.iterdir()):
            assert pa.read_bytes() == (b / pa.name).read_bytes()

    def test_env_var_overrides_flag(self, tmp_path, monkeypatch):
        out = tmp_path / "env_out"
        monkeypatch.setenv("DRAWAGE_OUT", str(out))
        monkeypatch.setenv("DRAWAGE_PER_GROUP", "2")
        monkeypatch.setenv("DRAWAGE_SEED", "3")
        assert main(["synth"]) == 0
        assert len(list(out.glob("*.csv"))) == 14

    def test_ingest_check_ok(self, corpus_dir):
        assert main(["ingest-check", str(corpus_dir)]) == 0

    def test_ingest_check_bad_file_exits_3(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t_ms,x,y,action,inside\n0,1,1,down,1\n")
        (tmp_path / "bad.meta.json").write_text(
            json.dumps({"child_id": "c", "group": 5, "gender": "F"})
        )
        assert main(["ingest-check", str(bad)]) == 3

    def test_extract_writes_channel_dumps(self, corpus_dir, tmp_path):
        out = tmp_path / "channels"
        assert main(["extract", "--data", str(corpus_dir), "--out", str(out)]) == 0
        dumps = list(out.glob("*.channels.csv"))
        assert len(dumps) == 56
        header = dumps[0].read_text().splitlines()[0]
        assert header.startswith("X,Y,Z,Theta,V,") and header.endswith("Inside,T")

    def test_split_command(self, corpus_dir, tmp_path):
        out = tmp_path / "split.json"
        assert main(["split", "--data", str(corpus_dir), "--seed", "4", "--out", str(out)]) == 0
        doc = read_json(out)
        assert set(doc["assignment"].values()) == {"train", "val", "eval"}

    def test_evaluate_and_report_flow(self, corpus_dir, tmp_path):
        config = _config_file(tmp_path, corpus_dir)
        run_dir = tmp_path / "run"
        assert main(["evaluate", "--config", str(config), "--out", str(run_dir), "--jobs", "1"]) == 0
        assert (run_dir / "report.json").exists()

        report_dir = tmp_path / "rendered"
        assert main([
            "report",
            "--report", str(run_dir / "report.json"),
            "--selection", str(run_dir / "selection.json"),
            "--out", str(report_dir),
        ]) == 0
        for name in ("metrics.csv", "per_group_agd.csv", "confusion.csv",
                     "per_group_agd.png", "confusion.png"):
            assert (report_dir / name).stat().st_size > 0

    def test_select_then_train(self, corpus_dir, tmp_path):
        config = _config_file(tmp_path, corpus_dir, selection="stat")
        sel_path = tmp_path / "selection.json"
        assert main(["select", "--config", str(config), "--out", str(sel_path), "--jobs", "1"]) == 0
        sel = read_json(sel_path)
        assert sel["method"] == "stat_dba"
        assert 1 <= len(sel["selected"]) <= 12

        model_path = tmp_path / "model.json"
        assert main([
            "train", "--config", str(config),
            "--selection-file", str(sel_path),
            "--out", str(model_path), "--jobs", "1",
        ]) == 0
        assert read_json(model_path)["selected"] == sel["selected"]

        rendered = tmp_path / "sel_render"
        assert main(["report", "--selection", str(sel_path), "--out", str(rendered)]) == 0
        assert (rendered / "selection_scores.csv").stat().st_size > 0
        assert (rendered / "selection_scores.png").stat().st_size > 0

    def test_predict_stdout(self, corpus_dir, tmp_path, capsys):
        config = _config_file(tmp_path, corpus_dir)
        run_dir = tmp_path / "run"
        assert main(["evaluate", "--config", str(config), "--out", str(run_dir), "--jobs", "1"]) == 0
        session = sorted(corpus_dir.glob("*.csv"))[0]
        assert main([
            "predict", "--model", str(run_dir / "model.json"), "--session", str(session),
        ]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) >= {"child_id", "true_group", "predicted_group", "scores"}
        assert doc["predicted_group"] in range(2, 9)

    def test_config_error_exits_2(self, corpus_dir, tmp_path):
        config = _config_file(tmp_path, corpus_dir, classifier="svm")
        assert main(["evaluate", "--config", str(config), "--out", str(tmp_path / "x")]) == 2

    def test_missing_data_exits_3(self, tmp_path):
        config = tmp_path / "c.json"
        write_json(config, {"data_dir": str(tmp_path / "nope"), "selection": "manual:V"})
        assert main(["evaluate", "--config", str(config), "--out", str(tmp_path / "x")]) == 3


class TestReportRendering:
    def test_sfs_trace_rendering(self, tmp_path):
        selection = {
            "method": "sfs_hmm",
            "selected": ["V", "Z"],
            "trace": [0.5, 0.25],
            "extras": {"steps": [
                {"channel": "V", "avg_agd": 0.5, "accuracy": 60.0},
                {"channel": "Z", "avg_agd": 0.25, "accuracy": 80.0},
            ]},
        }
        written = write_selection_outputs(selection, tmp_path)
        names = {p.name for p in written}
        assert names == {"sfs_trace.csv", "sfs_trace.png"}
        lines = (tmp_path / "sfs_trace.csv").read_text().splitlines()
        assert lines[0] == "step,channel,avg_agd,accuracy"
        assert len(lines) == 3

    def test_report_handles_missing_groups(self, tmp_path):
        report = {
            "accuracy": 50.0,
            "avg_agd": 1.0,
            "per_group_agd": {str(g): (None if g == 4 else 1.0) for g in range(2, 9)},
            "confusion": [[1 if i == j and i != 2 else 0 for j in range(7)] for i in range(7)],
            "config_fingerprint": "x",
            "versions": {"package": "0.1.0", "model_format": 1},
        }
        written = write_report_outputs(report, tmp_path)
        assert (tmp_path / "per_group_agd.csv").read_text().splitlines()[3] == "4,"
        assert len(written) == 5
