import json

import numpy as np
import pandas as pd
import pytest

from vipcast.baselines import SelectionResult
from vipcast.config import RunConfig
from vipcast.errors import ParseError
from vipcast.events import emit, error, event, warn
from vipcast.rundir import (
    RunDir,
    read_record,
    read_selection,
    write_metrics_csv,
    write_record,
    write_selection,
    write_selection_result,
)
from vipcast.training import TrainRecord


class TestRunDir:
    def test_layout(self, tmp_path):
        run = RunDir(tmp_path / "run").create()
        assert (tmp_path / "run" / "checkpoints").is_dir()
        assert run.iteration_checkpoint(7).name == "iter_007.npz"
        run.write_config(RunConfig())
        assert json.loads(run.config.read_text())["training"]["r_b"] == pytest.approx(0.1)
        run.write_summary({"method": "vip", "metrics": {"mae": 1.5}})
        assert run.read_summary()["metrics"]["mae"] == 1.5

    def test_metrics_csv(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv(path, pd.DataFrame({"horizon": ["1", "avg"], "mae": [1.0 / 3.0, 2.0]}))
        assert pd.read_csv(path)["mae"][0] == pytest.approx(1.0 / 3.0, rel=1e-9)


class TestRecordFile:
    def test_round_trip(self, tmp_path):
        record = TrainRecord(n=4)
        record.iterations.append({"k": 1, "kept_b": 3, "val_mae": 0.25})
        record.batch_masks.append([[0, 1, 2], [0, 2, 3]])
        path = tmp_path / "record.jsonl"
        write_record(path, record)
        loaded = read_record(path)
        assert loaded.n == 4
        assert loaded.iterations == record.iterations
        assert loaded.batch_masks == record.batch_masks
        np.testing.assert_array_equal(loaded.mask_log()[0][1], [1, 0, 1, 1])

    @pytest.mark.parametrize(
        "text, line",
        [
            ('{"type": "iteration", "k": 1}\n', 1),
            ('{"type": "record", "n": 2}\nnot json\n', 2),
            ('{"type": "record", "n": 2}\n{"type": "weird"}\n', 2),
        ],
    )
    def test_malformed(self, tmp_path, text, line):
        path = tmp_path / "record.jsonl"
        path.write_text(text)
        with pytest.raises(ParseError) as info:
            read_record(path)
        assert info.value.line == line


class TestSelectionFile:
    def test_round_trip_with_scores(self, tmp_path):
        scores = np.array([0.5, -1.25, 3.0, 0.0])
        path = tmp_path / "selection.txt"
        write_selection(path, [2, 0], "vip", scores)
        assert path.read_text() == "# method=vip\n0,0.5\n2,3.0\n"
        result = read_selection(path, n=4)
        assert result.indices == (0, 2)
        assert result.method == "vip"
        assert result.scores[2] == 3.0
        assert np.isnan(result.scores[1])

    def test_without_scores(self, tmp_path):
        path = tmp_path / "selection.txt"
        write_selection_result(path, SelectionResult((3, 1), "random"))
        result = read_selection(path)
        assert result == SelectionResult((1, 3), "random", None)

    @pytest.mark.parametrize("body", ["x,1\n", "1\n1\n", "9\n", "# method=vip\n"])
    def test_malformed(self, tmp_path, body):
        path = tmp_path / "selection.txt"
        path.write_text(body)
        with pytest.raises(ParseError):
            read_selection(path, n=4)


class TestEvents:
    def test_numpy_values_are_converted(self):
        evt = event("metrics", mae=np.float64(1.5), selected=np.array([1, 2]), nested={"k": np.int64(3)})
        assert evt == {"type": "metrics", "mae": 1.5, "selected": [1, 2], "nested": {"k": 3}}

    def test_quiet_suppresses_batches_only(self, capsys):
        emit("batch", quiet=True, loss=1.0)
        emit("epoch", quiet=True, epoch=1)
        lines = capsys.readouterr().out.splitlines()
        assert [json.loads(x)["type"] for x in lines] == ["epoch"]

    def test_warnings_and_errors(self, capsys):
        warn("careful", run="a")
        error("broken", stage="embed")
        captured = capsys.readouterr()
        assert json.loads(captured.out) == {"type": "warning", "message": "careful", "run": "a"}
        assert json.loads(captured.err)["stage"] == "embed"
