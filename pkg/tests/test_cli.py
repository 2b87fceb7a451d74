import csv
import json
import subprocess
import sys

import pytest

from sticm.cli import main

SMALL = ["--subsystems", "3", "--transient-steps", "50", "--seed", "1", "--jobs", "1"]
MODEL = ["--L", "4", "--m", "20", "--hidden", "4,4,4", "--epochs", "30"]


def run(tmp_path, *args, out="out"):
    d = tmp_path / out
    code = main([*args, "--out", str(d)])
    return code, d


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def outputs_without_manifest(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


class TestGenerate:
    def test_default_shape(self, tmp_path):
        code, d = run(tmp_path, "generate", "--transient-steps", "10")
        assert code == 0
        rows = read_rows(d / "data.csv")
        assert len(rows) == 66 and len(rows[0]) == 90
        assert rows[0][:3] == ["x1", "y1", "z1"]

    def test_manifest(self, tmp_path):
        code, d = run(tmp_path, "generate", *SMALL, "--steps", "10")
        man = json.loads((d / "manifest.json").read_text())
        assert code == 0 and man["command"] == "generate"
        assert set(man["outputs"]) == {"data.csv"} and "generate" in man["timings_seconds"]
        assert man["config"]["lorenz"]["subsystems"] == 3

    def test_divergence_exit_code(self, tmp_path):
        code, d = run(tmp_path, "generate", "--subsystems", "1", "--dt", "0.5", "--steps", "500")
        assert code == 3
        assert not d.exists() or not any(d.iterdir())


class TestTrain:
    def test_outputs(self, tmp_path):
        code, d = run(tmp_path, "train", *SMALL, *MODEL, "--target", "y2")
        assert code == 0
        rows = read_rows(d / "predictions.csv")
        assert rows[0] == ["step", "time", "predicted", "actual"] and len(rows) == 4
        assert [r[1] for r in rows[1:]] == ["21", "22", "23"]
        assert len(read_rows(d / "training_curve.csv")) == 31
        result = json.loads((d / "result.json").read_text())
        assert result["target"] == "y2" and result["L"] == 4

    def test_reruns_are_byte_identical(self, tmp_path):
        _, a = run(tmp_path, "train", *SMALL, *MODEL, out="a")
        _, b = run(tmp_path, "train", *SMALL, *MODEL, out="b")
        assert outputs_without_manifest(a) == outputs_without_manifest(b)
        ma, mb = (json.loads((p / "manifest.json").read_text()) for p in (a, b))
        assert ma["outputs"] == mb["outputs"]

    def test_flags_override_config_file(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"m": 25, "architecture": {"L": 5, "max_epochs": 7}}))
        code, d = run(tmp_path, "train", *SMALL, "--config", str(conf), "--L", "4", "--hidden", "4,4,4")
        cfg = json.loads((d / "manifest.json").read_text())["config"]
        assert code == 0
        assert cfg["m"] == 25 and cfg["architecture"]["L"] == 4 and cfg["architecture"]["max_epochs"] == 7

    @pytest.mark.parametrize("extra", [["--L", "12"], ["--m", "2"], ["--lr", "-1"], ["--target", "nope"]])
    def test_config_errors_write_nothing(self, tmp_path, extra):
        code, d = run(tmp_path, "train", *SMALL, *MODEL, *extra)
        assert code == 1
        assert not d.exists()

    def test_bad_flag_is_usage_error(self, tmp_path):
        assert run(tmp_path, "train", "--no-such-flag")[0] == 1

    def test_missing_config_file(self, tmp_path):
        assert run(tmp_path, "train", "--config", str(tmp_path / "nope.json"))[0] == 1

    def test_data_errors(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,NA\n")
        assert run(tmp_path, "train", "--data", str(bad), "--L", "2")[0] == 2
        assert run(tmp_path, "train", "--data", str(tmp_path / "missing.csv"))[0] == 2

    def test_trains_on_csv(self, tmp_path):
        _, g = run(tmp_path, "generate", *SMALL, "--steps", "23", out="g")
        code, d = run(tmp_path, "train", "--data", str(g / "data.csv"), *MODEL, "--jobs", "1")
        man = json.loads((d / "manifest.json").read_text())
        assert code == 0 and str(g / "data.csv") in man["inputs"]


class TestSelectAndNetwork:
    def test_select_then_granger(self, tmp_path):
        sel_args = [*SMALL, "--L", "3", "--m", "20", "--hidden", "4,4,4", "--epochs", "15"]
        code, s = run(tmp_path, "select", *sel_args, "--q", "6", out="s")
        assert code == 0
        ranking = json.loads((s / "ranking.json").read_text())
        assert len(ranking["selected"]) == 6 and ranking["target"] in ranking["selected"]
        code, n = run(tmp_path, "network", *sel_args, "--mode", "granger", "--ranking", str(s / "ranking.json"),
                      out="n")
        assert code == 0
        net = json.loads((n / "network.json").read_text())
        assert len(net["directed_edges"]) == 30

    def test_select_rejects_small_q(self, tmp_path):
        assert run(tmp_path, "select", *SMALL, *MODEL, "--q", "3")[0] == 1

    def test_granger_needs_ranking_file(self, tmp_path):
        code, d = run(tmp_path, "network", *SMALL, *MODEL, "--mode", "granger",
                      "--ranking", str(tmp_path / "ranking.json"))
        assert code == 1 and not d.exists()

    def test_pcc_network(self, tmp_path):
        code, d = run(tmp_path, "network", *SMALL, "--m", "30", "--mode", "pcc")
        net = json.loads((d / "network.json").read_text())
        assert code == 0 and len(net["undirected_edges"]) == 36


class TestBenchmark:
    def test_table(self, tmp_path, capsys):
        code, d = run(tmp_path, "benchmark", *SMALL, *MODEL, "--seeds", "0,1", "--targets-per-seed", "2",
                      "--methods", "sticm,ar,hes")
        assert code == 0
        rows = read_rows(d / "comparison.csv")
        assert [r[0] for r in rows[1:]] == ["sticm", "ar", "hes"]
        assert len(json.loads((d / "reports.json").read_text())) == 12
        assert "median nRMSE" in capsys.readouterr().out

    def test_unknown_method(self, tmp_path):
        assert run(tmp_path, "benchmark", *SMALL, *MODEL, "--methods", "sticm,lstm")[0] == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sticm", "generate", *SMALL, "--steps", "5",
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "data.csv").exists()
