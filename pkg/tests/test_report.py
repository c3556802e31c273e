import json

import pandas as pd
import pytest

from vipcast.report import build_report, load_run, write_report


def _run(path, method, seed, m, mae, name="evaluation.json", n=10):
    path.mkdir(parents=True)
    payload = {"method": method, "seed": seed, "n": n, "m": m, "split": "test", "metrics": {"mae": mae, "rmse": mae * 2, "mape_pct": 10.0}}
    (path / name).write_text(json.dumps(payload))
    return path


class TestLoadRun:
    def test_prefers_evaluation(self, tmp_path):
        run = _run(tmp_path / "a", "vip", 0, 2, 1.0)
        (run / "summary.json").write_text(json.dumps({"method": "other", "metrics": {}}))
        row = load_run(run)
        assert row["method"] == "vip"
        assert row["sparsity"] == pytest.approx(0.8)

    def test_falls_back_to_summary(self, tmp_path):
        row = load_run(_run(tmp_path / "a", "stmf", 0, 10, 1.0, name="summary.json"))
        assert row["method"] == "stmf"
        assert row["sparsity"] == pytest.approx(0.0)

    def test_missing_files_warn(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert load_run(tmp_path / "empty") is None
        assert json.loads(capsys.readouterr().out)["type"] == "warning"


class TestReport:
    def test_table_and_curve(self, tmp_path, capsys):
        runs = [
            _run(tmp_path / "v0", "vip", 0, 5, 1.0),
            _run(tmp_path / "v1", "vip", 1, 5, 3.0),
            _run(tmp_path / "v2", "vip", 0, 1, 4.0),
            _run(tmp_path / "r0", "random", 0, 1, 6.0),
        ]
        table, curve = build_report(runs + [tmp_path / "missing"])
        means = table[table["run"] == "<mean>"].set_index("method")
        stds = table[table["run"] == "<std>"].set_index("method")
        assert means.loc["vip", "mae"] == pytest.approx(8.0 / 3.0)
        assert stds.loc["random", "mae"] == pytest.approx(0.0)
        vip_curve = curve[curve["method"] == "vip"]
        assert list(vip_curve["sparsity"]) == pytest.approx([0.5, 0.9])
        assert list(vip_curve["mae"]) == pytest.approx([2.0, 4.0])
        assert list(vip_curve["runs"]) == [2, 1]
        assert "warning" in capsys.readouterr().out

    def test_no_runs(self):
        table, curve = build_report([])
        assert table.empty and curve.empty

    def test_write_report(self, tmp_path):
        runs = [_run(tmp_path / "a", "vip", 0, 2, 1.0)]
        paths = write_report(runs, tmp_path / "out")
        assert set(paths) == {"report", "curve"}
        assert pd.read_csv(paths["report"])["method"].tolist() == ["vip", "vip", "vip"]
        assert len(pd.read_csv(paths["curve"])) == 1
