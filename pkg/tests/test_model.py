import numpy as np
import pytest

from conftest import random_batch, toy_dims
from vipcast.data import WindowBatch
from vipcast.errors import ContractError, NumericError, ParseError
from vipcast.model import (
    attention,
    embed,
    forward_stmf,
    head_columns,
    init_params,
    load_checkpoint,
    save_checkpoint,
    spatial_attention,
    temporal_attention,
)
from vipcast.tensor import Tensor, softmax


class TestInit:
    def test_shapes(self, dims):
        params = init_params(5, dims, seed=0)
        named = params.named_tensors()
        assert named["embeddings.node"].shape == (5, dims.d_v)
        assert named["embeddings.tod"].shape == (dims.steps_per_day, dims.d_tod)
        assert named["layers.1.w_q"].shape == (dims.q, dims.q)
        assert named["output.w"].shape == (dims.l * dims.q, dims.l_out)
        assert len(params.layers) == dims.num_layers

    def test_uniform_bounds(self, dims):
        params = init_params(5, dims, seed=0)
        bound = 1.0 / np.sqrt(dims.q)
        assert np.abs(params.layers[0].w_q.data).max() <= bound
        np.testing.assert_array_equal(params.layers[0].ln1_gain.data, 1.0)

    def test_seeded(self, dims):
        a, b = init_params(5, dims, seed=3), init_params(5, dims, seed=3)
        for k, v in a.state_dict().items():
            np.testing.assert_array_equal(v, b.state_dict()[k])

    def test_copy_is_independent(self, dims):
        params = init_params(5, dims, seed=0)
        clone = params.copy()
        clone.layers[0].w_q.data += 1.0
        assert not np.array_equal(clone.layers[0].w_q.data, params.layers[0].w_q.data)


class TestEmbed:
    def test_layout(self, dims, batch5):
        params = init_params(5, dims, seed=0)
        e = embed(batch5, params)
        assert e.shape == (3, 5, dims.l, dims.q)
        node_block = e.data[..., dims.d : dims.d + dims.d_v]
        np.testing.assert_array_equal(node_block[1, 2, 0], params.embeddings.node.data[2])
        tod_block = e.data[..., dims.d + dims.d_v : dims.d + dims.d_v + dims.d_tod]
        np.testing.assert_array_equal(tod_block[0, 4, 1], params.embeddings.tod.data[batch5.tod[0, 1]])

    def test_rows_select_variables(self, dims, batch5):
        params = init_params(5, dims, seed=0)
        full = embed(batch5, params)
        rows = embed(batch5, params, rows=[1, 3])
        np.testing.assert_allclose(rows.data, full.data[:, [1, 3]])

    def test_bad_temporal_index(self, dims, batch5):
        params = init_params(5, dims, seed=0)
        bad = WindowBatch(batch5.x_in, batch5.x_out, batch5.tod + dims.steps_per_day, batch5.dow)
        with pytest.raises(ContractError):
            embed(bad, params)

    def test_wrong_window_length(self, dims):
        params = init_params(5, dims, seed=0)
        with pytest.raises(ContractError):
            embed(random_batch(5, toy_dims(l=5), 1), params)


class TestAttention:
    def test_single_head_matches_formula(self):
        rng = np.random.default_rng(0)
        e = rng.standard_normal((3, 6, 4))
        w = [rng.standard_normal((4, 4)) for _ in range(3)]
        out = attention(Tensor(e), *(Tensor(x) for x in w), num_heads=1)
        q, k, v = e @ w[0], e @ w[1], e @ w[2]
        expected = softmax(q @ np.swapaxes(k, -1, -2) / 2.0, axis=-1).data @ v
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_head_columns_by_original_index(self):
        groups = head_columns([0, 3, 4, 5, 15], q=16, num_heads=4)
        assert [g.tolist() for g in groups] == [[0, 1], [2, 3], [], [4]]

    def test_empty_head_attends_uniformly(self):
        rng = np.random.default_rng(1)
        e = Tensor(rng.standard_normal((5, 8)))
        w_q, w_k, w_v = (Tensor(rng.standard_normal((8, 8))) for _ in range(3))
        out = attention(e, w_q, w_k, w_v, num_heads=2, columns=[0, 1, 2])
        v = e.data @ w_v.data
        np.testing.assert_allclose(out.data[:, 4:], np.broadcast_to(v[:, 4:].mean(axis=0), (5, 4)), atol=1e-12)

    def test_spatial_is_temporal_on_swapped_axes(self, dims):
        params = init_params(4, dims, seed=0)
        h = Tensor(np.random.default_rng(2).standard_normal((4, dims.l, dims.q)))
        spatial = spatial_attention(h, params.layers[1], dims.num_heads)
        swapped = Tensor(np.swapaxes(h.data, 0, 1))
        temporal = temporal_attention(swapped, params.layers[1], dims.num_heads)
        np.testing.assert_allclose(spatial.data, np.swapaxes(temporal.data, 0, 1), atol=1e-12)

    def test_temporal_commutes_with_variable_order(self, dims):
        params = init_params(4, dims, seed=0)
        h = np.random.default_rng(3).standard_normal((4, dims.l, dims.q))
        perm = np.array([2, 0, 3, 1])
        out = temporal_attention(Tensor(h), params.layers[0], dims.num_heads).data
        permuted = temporal_attention(Tensor(h[perm]), params.layers[0], dims.num_heads).data
        np.testing.assert_allclose(permuted, out[perm], atol=1e-12)

    def test_spatial_commutes_with_time_order(self, dims):
        params = init_params(4, dims, seed=0)
        h = np.random.default_rng(4).standard_normal((4, dims.l, dims.q))
        perm = np.array([3, 1, 0, 2])
        out = spatial_attention(Tensor(h), params.layers[0], dims.num_heads).data
        permuted = spatial_attention(Tensor(h[:, perm]), params.layers[0], dims.num_heads).data
        np.testing.assert_allclose(permuted, out[:, perm], atol=1e-12)


class TestForward:
    def test_output_shapes(self, dims, batch5):
        params = init_params(5, dims, seed=0)
        assert forward_stmf(batch5, params).shape == (3, 5, dims.l_out)
        assert forward_stmf(batch5.sample(0), params).shape == (5, dims.l_out)

    def test_batch_equals_per_sample(self, dims, batch5):
        params = init_params(5, dims, seed=0)
        batched = forward_stmf(batch5, params).data
        for i in range(len(batch5)):
            np.testing.assert_allclose(batched[i], forward_stmf(batch5.sample(i), params).data, atol=1e-12)

    def test_without_residual(self, batch5):
        dims = toy_dims(residual=False)
        params = init_params(5, dims, seed=0)
        assert np.all(np.isfinite(forward_stmf(batch5, params).data))

    def test_non_finite_names_stage(self, dims, batch5):
        params = init_params(5, dims, seed=0)
        params.layers[0].w_q.data[:] = 1e200
        with pytest.raises(NumericError) as info:
            forward_stmf(batch5, params)
        assert info.value.stage == "temporal[0]"


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, dims, tmp_path):
        params = init_params(5, dims, seed=4)
        extra = {"mask.b": np.array([1, 0, 1, 0, 0], dtype=np.int8)}
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, params, extra, meta={"kind": "stmf", "seed": 4})
        loaded, loaded_extra, meta = load_checkpoint(path)
        assert loaded.dims == dims
        assert loaded.n == 5
        assert meta == {"kind": "stmf", "seed": 4}
        np.testing.assert_array_equal(loaded_extra["mask.b"], extra["mask.b"])
        for k, v in params.state_dict().items():
            np.testing.assert_array_equal(loaded.state_dict()[k], v)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, x=np.zeros(2))
        with pytest.raises(ParseError):
            load_checkpoint(path)
