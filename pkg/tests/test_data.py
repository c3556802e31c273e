import numpy as np
import pytest

from vipcast.data import (
    AdjacencyMatrix,
    RawSeries,
    WindowBatch,
    load_adjacency,
    load_coords,
    load_dataset,
    load_values,
    make_window_batch,
    make_windows,
    normalize_adjacency,
    split,
    temporal_indices,
    window_count,
    write_adjacency,
    write_values,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from vipcast.errors import ConfigError, ContractError, DegenerateDataError, ParseError


def _series(n=3, t=20, start_offset=0):
    values = np.arange(n * t, dtype=np.float64).reshape(n, t)
    return RawSeries(values, interval_seconds=300, start_offset=start_offset)


class TestValueFile:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        series = RawSeries(rng.standard_normal((4, 9)) * 1e3, 60, 5)
        path = tmp_path / "values.csv"
        write_values(path, series)
        loaded = load_values(path)
        np.testing.assert_array_equal(loaded.values, series.values)
        assert (loaded.interval_seconds, loaded.start_offset) == (60, 5)

    def test_comments_and_three_field_header(self, tmp_path):
        path = tmp_path / "values.csv"
        path.write_text("# sensors\n2,3,300\n1,2,3\n\n4,5,6\n")
        series = load_values(path)
        assert series.n == 2 and series.T == 3 and series.start_offset == 0

    @pytest.mark.parametrize(
        "text, line",
        [
            ("2,3,300\n1,2\n4,5,6\n", 2),
            ("2,3,300\n1,2,x\n4,5,6\n", 2),
            ("2,3,300\n1,2,3\n4,5,6\n7,8,9\n", 4),
            ("2,3,300\n1,2,3\n4,nan,6\n", 3),
            ("n,T\n", 1),
        ],
    )
    def test_malformed_rows_report_line(self, tmp_path, text, line):
        path = tmp_path / "values.csv"
        path.write_text(text)
        with pytest.raises(ParseError) as info:
            load_values(path)
        assert info.value.line == line

    def test_missing_rows(self, tmp_path):
        path = tmp_path / "values.csv"
        path.write_text("3,2,300\n1,2\n")
        with pytest.raises(ParseError, match="expected 3 rows"):
            load_values(path)


class TestAdjacencyFile:
    def test_undirected_without_self_loops(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("from,to,cost\n0,1,2.5\n2,2\n1,3\n")
        adj = load_adjacency(path, 4)
        assert adj.entries[1, 0] == 2.5
        assert adj.entries[3, 1] == 1.0
        assert adj.entries[2, 2] == 0.0
        np.testing.assert_array_equal(adj.degrees(), [1, 2, 0, 1])

    def test_declared_n_must_match(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("n=5\n0,1\n")
        with pytest.raises(ParseError):
            load_adjacency(path, 4)

    @pytest.mark.parametrize("row", ["0,9", "0,1,-1", "0,1,2,3", "a,b"])
    def test_bad_rows(self, tmp_path, row):
        path = tmp_path / "adj.csv"
        path.write_text(f"0,1\n{row}\n")
        with pytest.raises(ParseError) as info:
            load_adjacency(path, 4)
        assert info.value.line == 2

    def test_round_trip(self, tmp_path):
        entries = np.zeros((4, 4))
        entries[0, 2] = entries[2, 0] = 0.5
        entries[1, 3] = entries[3, 1] = 1.0
        path = tmp_path / "adj.csv"
        write_adjacency(path, AdjacencyMatrix(entries))
        np.testing.assert_array_equal(load_adjacency(path, 4).entries, entries)


class TestLoadDataset:
    def test_loads_both_files(self, tmp_path):
        values, adj = tmp_path / "values.csv", tmp_path / "adj.csv"
        values.write_text("3,2,300\n1,2\n3,4\n5,6\n")
        adj.write_text("0,2,1.5\n")
        series, adjacency = load_dataset(values, adj)
        assert series.n == 3 and adjacency.n == 3
        assert adjacency.entries[2, 0] == 1.5

    def test_node_count_mismatch(self, tmp_path):
        values, adj = tmp_path / "values.csv", tmp_path / "adj.csv"
        values.write_text("2,2,300\n1,2\n3,4\n")
        adj.write_text("0,3\n")
        with pytest.raises(ParseError):
            load_dataset(values, adj)


class TestCoords:
    def test_header_and_rows(self, tmp_path):
        path = tmp_path / "coords.csv"
        path.write_text("index,x,y\n1,0.5,0.25\n0,1,2\n")
        np.testing.assert_array_equal(load_coords(path, 2), [[1, 2], [0.5, 0.25]])

    def test_missing_node(self, tmp_path):
        path = tmp_path / "coords.csv"
        path.write_text("0,1,2\n")
        with pytest.raises(ParseError, match="no coordinates"):
            load_coords(path, 2)


class TestNormalization:
    def test_zscore_round_trip(self):
        series = _series()
        stats = zscore_fit(series)
        z = zscore_apply(series.values, stats)
        assert z.mean() == pytest.approx(0.0, abs=1e-12)
        assert z.std() == pytest.approx(1.0)
        np.testing.assert_allclose(zscore_invert(z, stats), series.values, atol=1e-9)

    def test_constant_series_is_degenerate(self):
        with pytest.raises(DegenerateDataError):
            zscore_fit(np.ones((3, 5)))


class TestSplit:
    def test_lengths_and_offsets(self):
        train, val, test = split(_series(t=101, start_offset=7), (0.7, 0.15, 0.15))
        assert (train.T, val.T, test.T) == (70, 15, 16)
        assert val.start_offset == 77
        assert test.start_offset == 92

    def test_short_split_rejected(self):
        with pytest.raises(ConfigError, match="val"):
            split(_series(t=20), (0.8, 0.1, 0.1), min_length=3)

    def test_ratios_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            split(_series(), (0.5, 0.2, 0.2))


class TestWindows:
    def test_count(self):
        assert window_count(20, 4, 4, 1) == 13
        assert window_count(20, 4, 4, 5) == 3
        assert window_count(7, 4, 4, 1) == 0

    def test_contents_follow_the_series(self):
        series = _series(t=20)
        batch = make_window_batch(series, 4, 3, stride=2)
        assert isinstance(batch, WindowBatch)
        assert batch.x_in.shape == (7, 3, 4)
        assert batch.x_out.shape == (7, 3, 3)
        np.testing.assert_array_equal(batch.x_in[2], series.values[:, 4:8])
        np.testing.assert_array_equal(batch.x_out[2], series.values[:, 8:11])

    def test_samples_match_batch(self):
        series = _series(t=12)
        samples = make_windows(series, 3, 2)
        batch = WindowBatch.from_samples(samples)
        np.testing.assert_array_equal(batch.x_in, make_window_batch(series, 3, 2).x_in)

    def test_too_short_gives_none(self):
        assert make_window_batch(_series(t=5), 4, 4) is None
        assert make_windows(_series(t=5), 4, 4) == []

    def test_temporal_indices_wrap(self):
        tod, dow = temporal_indices(286, 4, 300)
        np.testing.assert_array_equal(tod, [286, 287, 0, 1])
        np.testing.assert_array_equal(dow, [0, 0, 1, 1])
        _, dow = temporal_indices(7 * 288 - 1, 2, 300)
        np.testing.assert_array_equal(dow, [6, 0])

    def test_window_tod_uses_start_offset(self):
        batch = make_window_batch(_series(t=10, start_offset=287), 2, 1)
        np.testing.assert_array_equal(batch.tod[0], [287, 0])
        np.testing.assert_array_equal(batch.dow[0], [0, 1])


class TestNormalizeAdjacency:
    def test_symmetric_normalization(self):
        entries = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        a = normalize_adjacency(entries)
        deg = np.array([2.0, 3.0, 2.0])
        expected = (entries + np.eye(3)) / np.sqrt(np.outer(deg, deg))
        np.testing.assert_allclose(a, expected, atol=1e-15)
        np.testing.assert_allclose(a, a.T)

    def test_input_diagonal_ignored(self):
        entries = np.array([[5.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(normalize_adjacency(entries), normalize_adjacency(entries - np.diag([5.0, 0.0])))

    def test_isolated_node_keeps_self_loop(self):
        np.testing.assert_allclose(normalize_adjacency(np.zeros((2, 2))), np.eye(2))

    def test_rejects_negative(self):
        with pytest.raises(ContractError):
            normalize_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))
