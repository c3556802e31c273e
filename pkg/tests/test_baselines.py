import numpy as np
import pytest

from conftest import path_graph
from vipcast.baselines import (
    SelectionResult,
    hybrid_pin,
    run_selector,
    select_grid,
    select_max_connectivity,
    select_max_value,
    select_random,
    selection_mask,
    top_m,
)
from vipcast.data import AdjacencyMatrix, RawSeries
from vipcast.errors import ConfigError, ContractError, UnsupportedMethodError

EDGES = [(1, 0), (1, 2), (3, 2), (3, 6), (4, 5), (4, 0), (7, 6), (7, 5), (1, 4), (3, 7)]
COORDS = np.array(
    [[0.0, 0.0], [0.1, 0.1], [1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9], [1.0, 1.0], [0.9, 0.9]]
)


@pytest.fixture
def graph8():
    entries = np.zeros((8, 8))
    for i, j in EDGES:
        entries[i, j] = entries[j, i] = 1.0
    return AdjacencyMatrix(entries)


class TestTopM:
    def test_ties_prefer_lowest_index(self):
        np.testing.assert_array_equal(top_m(np.array([1.0, 3.0, 3.0, 3.0]), 2), [1, 2])

    def test_candidates(self):
        np.testing.assert_array_equal(top_m(np.array([9.0, 1.0, 5.0, 7.0]), 1, candidates=np.array([1, 2, 3])), [3])


class TestSelectors:
    def test_max_value(self):
        values = np.array([[1.0, 1.0], [5.0, 7.0], [3.0, 3.0], [6.0, 6.0]])
        result = select_max_value(RawSeries(values, 300), 2)
        assert result.indices == (1, 3)
        np.testing.assert_allclose(result.scores, [1.0, 6.0, 3.0, 6.0])

    def test_max_connectivity(self):
        assert select_max_connectivity(path_graph(5), 2).indices == (1, 2)

    def test_grid_one_per_cell(self, graph8):
        assert select_grid(COORDS, graph8, 4).indices == (1, 3, 4, 7)

    def test_grid_tops_up_with_degree(self, graph8):
        assert select_grid(COORDS, graph8, 5).indices == (0, 1, 3, 4, 7)

    def test_grid_cuts_back_to_budget(self, graph8):
        assert select_grid(COORDS, graph8, 2).indices == (1, 3)

    def test_grid_needs_coordinates(self, graph8):
        with pytest.raises(UnsupportedMethodError):
            select_grid(None, graph8, 2)
        with pytest.raises(UnsupportedMethodError):
            select_grid(COORDS[:4], graph8, 2)

    def test_random_is_seeded_and_distinct(self):
        a, b = select_random(20, 5, seed=3), select_random(20, 5, seed=3)
        assert a.indices == b.indices
        assert len(set(a.indices)) == 5
        assert list(a.indices) == sorted(a.indices)

    def test_budget_checked(self):
        with pytest.raises(ConfigError):
            select_random(4, 5, seed=0)


class TestDispatch:
    def test_run_selector(self, graph8):
        series = RawSeries(np.arange(16.0).reshape(8, 2), 300)
        assert run_selector("max-value", 2, series, graph8).indices == (6, 7)
        assert run_selector("max-connectivity", 2, series, graph8).method == "max-connectivity"
        assert run_selector("grid", 4, series, graph8, COORDS).indices == (1, 3, 4, 7)
        assert run_selector("random", 3, series, graph8, seed=5) == select_random(8, 3, seed=5)

    def test_unknown_method(self, graph8):
        with pytest.raises(UnsupportedMethodError):
            run_selector("pagerank", 2, RawSeries(np.ones((8, 2)), 300), graph8)


class TestHybrid:
    def test_pins_first_stage(self):
        assert hybrid_pin(SelectionResult((5, 2), "max-value"), 3) == (2, 5)

    def test_first_stage_size(self):
        with pytest.raises(ContractError):
            hybrid_pin(SelectionResult((1, 2, 3), "max-value"), 4)


def test_selection_mask():
    np.testing.assert_array_equal(selection_mask([0, 3], 5), [1, 0, 0, 1, 0])
