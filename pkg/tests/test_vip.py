import numpy as np
import pytest

from vipcast.errors import ContractError
from vipcast.model import AttentionLayer, init_params, temporal_attention
from vipcast.pruning import init_mask_state
from vipcast.tensor import GradTape, Tensor, backward, gelu, grad_check_leaves, softmax, tsum
from vipcast.vip import (
    BridgeParams,
    extrapolation_bridge,
    forward_vip,
    fuse_adjacency,
    init_bridge,
    masked_attention,
    propagate,
    vip_trace,
)


@pytest.fixture
def setup(dims, a_norm5):
    params = init_params(5, dims, seed=0)
    bridge = init_bridge(5, dims.q, dims.d_v, seed=1, extra_map=True)
    mask = init_mask_state(a_norm5, dims.q, seed=2)
    mask.b[:] = [1, 0, 1, 0, 0]
    mask.p[[1, 4, 9, 10, 11, 12, 13, 14, 15]] = 0
    return params, bridge, mask


def _layer(q, rng):
    return AttentionLayer(*(Tensor(rng.standard_normal((q, q))) for _ in range(3)), *([None] * 8))


class TestMaskedAttention:
    def test_full_masks_reduce_to_plain_attention(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            heads = int(rng.choice([1, 2, 4]))
            q = 4 * heads
            layer = _layer(q, rng)
            e = Tensor(rng.standard_normal((2, 3, 5, q)))
            masked = masked_attention(e, np.ones(q), Tensor(np.ones(q)), layer, heads)
            plain = temporal_attention(e, layer, heads)
            np.testing.assert_allclose(masked.data, plain.data, rtol=0, atol=1e-12)

    def test_retained_columns_and_value_gate(self):
        rng = np.random.default_rng(1)
        layer = _layer(4, rng)
        e = rng.standard_normal((6, 4))
        p = np.array([1, 0, 1, 1])
        p_hat = rng.standard_normal(4)
        out = masked_attention(Tensor(e), p, Tensor(p_hat), layer, num_heads=1)
        cols = [0, 2, 3]
        qs = e @ layer.w_q.data[:, cols]
        ks = e @ layer.w_k.data[:, cols]
        vs = (e @ layer.w_v.data) * p_hat
        expected = softmax(qs @ ks.T / 2.0, axis=-1).data @ vs
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_empty_parameter_mask(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ContractError):
            masked_attention(Tensor(rng.standard_normal((3, 4))), np.zeros(4), Tensor(np.ones(4)), _layer(4, rng), 1)


class TestExtrapolation:
    def test_bridge_formula(self, setup):
        params, bridge, mask = setup
        node = params.embeddings.node.data
        out = extrapolation_bridge(params.embeddings.node, mask.b, bridge)
        projected = node @ bridge.fc_w.data + bridge.fc_b.data
        expected = gelu(projected[[0, 2]] @ projected.T).data
        assert out.shape == (2, 5)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_bridge_row_softmax(self, setup):
        params, bridge, mask = setup
        out = extrapolation_bridge(params.embeddings.node, mask.b, bridge, row_softmax=True)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)

    def test_identity_projection_gives_gelu_of_inner_products(self):
        bridge = BridgeParams(fc_w=Tensor(np.eye(4)), fc_b=Tensor(np.zeros(4)))
        out = extrapolation_bridge(Tensor(np.eye(4)), np.array([1, 0, 1, 0]), bridge).data
        expected = np.zeros((2, 4))
        expected[0, 0] = expected[1, 2] = 0.8413447460685429
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_fuse_scales_rows_by_importance(self, setup, a_norm5):
        _, _, mask = setup
        similarity = Tensor(np.random.default_rng(3).standard_normal((2, 5)))
        fused = fuse_adjacency(mask.b_hat, a_norm5, mask.b, similarity)
        expected = mask.b_hat.data[[0, 2], None] * a_norm5[[0, 2]] + similarity.data
        np.testing.assert_allclose(fused.data, expected, atol=1e-15)

    def test_fuse_shape_checks(self, setup, a_norm5):
        _, _, mask = setup
        with pytest.raises(ContractError):
            fuse_adjacency(mask.b_hat, a_norm5, mask.b, Tensor(np.zeros((3, 5))))
        with pytest.raises(ContractError):
            fuse_adjacency(mask.b_hat, a_norm5[:4, :4], mask.b, Tensor(np.zeros((2, 5))))

    def test_propagate_matches_einsum(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((2, 5))
        h = rng.standard_normal((3, 2, 4, 6))
        out = propagate(Tensor(a), Tensor(h))
        assert out.shape == (3, 5, 4, 6)
        np.testing.assert_allclose(out.data, np.einsum("mn,bmlq->bnlq", a, h), atol=1e-12)

    def test_propagate_matches_per_step_products(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((3, 5))
        h = rng.standard_normal((3, 4, 6))
        out = propagate(Tensor(a), Tensor(h)).data
        for t in range(4):
            np.testing.assert_allclose(out[:, t, :], a.T @ h[:, t, :], atol=1e-12)

    def test_propagate_row_mismatch(self):
        with pytest.raises(ContractError):
            propagate(Tensor(np.ones((3, 5))), Tensor(np.ones((2, 4, 6))))


class TestForwardVip:
    def test_output_shapes(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        assert forward_vip(batch5, mask, params, bridge, a_norm5).shape == (3, 5, params.dims.l_out)
        assert forward_vip(batch5.sample(1), mask, params, bridge, a_norm5).shape == (5, params.dims.l_out)

    def test_reads_only_selected_variables(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        before = forward_vip(batch5, mask, params, bridge, a_norm5).data
        batch5.x_in[:, [1, 3, 4]] += 100.0
        after = forward_vip(batch5, mask, params, bridge, a_norm5).data
        np.testing.assert_array_equal(before, after)

    def test_trace_shapes(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        trace = vip_trace(batch5, mask.b, mask.p, mask.b_hat, mask.p_hat, params, bridge, a_norm5)
        dims = params.dims
        assert trace.e_masked.shape == (3, 2, dims.l, dims.q)
        assert trace.h_masked.shape == (3, 2, dims.l, dims.q)
        assert trace.bridge.shape == (2, 5)
        assert trace.h_full.shape == (3, 5, dims.l, dims.q)

    def test_importance_gradients(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        with GradTape() as tape:
            loss = tsum(forward_vip(batch5, mask, params, bridge, a_norm5))
        backward(loss, tape)
        assert np.all(mask.b_hat.grad[[1, 3, 4]] == 0.0)
        assert np.all(mask.b_hat.grad[[0, 2]] != 0.0)
        assert np.any(mask.p_hat.grad != 0.0)

    def test_unselected_node_embeddings_learn_through_bridge(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        with GradTape() as tape:
            loss = tsum(forward_vip(batch5, mask, params, bridge, a_norm5))
        backward(loss, tape)
        assert np.all(np.abs(params.embeddings.node.grad[[1, 3, 4]]).sum(axis=1) > 0.0)

    def test_no_extra_maps_representation(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        dims = params.dims
        trace = vip_trace(batch5, mask.b, mask.p, mask.b_hat, mask.p_hat, params, bridge, a_norm5, no_extra=True)
        assert trace.bridge is None and trace.a_fused is None
        assert trace.h_full.shape == (3, 5, dims.l, dims.q)
        h = np.swapaxes(trace.h_masked.data, 1, 2).reshape(3, dims.l, 2 * dims.q)
        w1 = bridge.extra_w1.data[[0, 2]].reshape(2 * dims.q, -1)
        z = gelu(h @ w1 + bridge.extra_b1.data).data
        expected = (z @ bridge.extra_w2.data + bridge.extra_b2.data).reshape(3, dims.l, 5, dims.q)
        np.testing.assert_allclose(trace.h_full.data, np.swapaxes(expected, 1, 2), atol=1e-12)

    def test_no_extra_gradient_touches_selected_rows(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        with GradTape() as tape:
            loss = tsum(forward_vip(batch5, mask, params, bridge, a_norm5, no_extra=True))
        backward(loss, tape)
        np.testing.assert_array_equal(bridge.extra_w1.grad[[1, 3, 4]], 0.0)
        assert np.any(bridge.extra_w1.grad[[0, 2]] != 0.0)
        assert np.any(bridge.extra_w2.grad != 0.0)

    def test_no_extra_fits_any_selection_size(self, setup, a_norm5, batch5):
        params, bridge, mask = setup
        for selected in ([1], [0, 1, 3], [0, 1, 2, 3, 4]):
            mask.b[:] = 0
            mask.b[selected] = 1
            out = forward_vip(batch5, mask, params, bridge, a_norm5, no_extra=True)
            assert out.shape == (3, 5, params.dims.l_out)

    def test_no_extra_needs_the_map(self, setup, a_norm5, batch5):
        params, _, mask = setup
        plain = init_bridge(5, params.dims.q, params.dims.d_v, seed=1)
        assert "bridge.extra_w1" not in plain.named_tensors()
        with pytest.raises(ContractError):
            forward_vip(batch5, mask, params, plain, a_norm5, no_extra=True)


class TestGradients:
    @pytest.mark.parametrize("no_extra", [False, True])
    def test_full_pass_matches_finite_differences(self, setup, a_norm5, batch5, no_extra):
        params, bridge, mask = setup
        weights = np.random.default_rng(5).standard_normal((3, 5, params.dims.l_out))

        def loss():
            return tsum(forward_vip(batch5, mask, params, bridge, a_norm5, no_extra) * weights)

        leaves = {**params.named_tensors(), **bridge.named_tensors(), "b_hat": mask.b_hat, "p_hat": mask.p_hat}
        errors = grad_check_leaves(loss, leaves, max_entries=6, seed=0)
        worst = max(errors, key=errors.get)
        assert errors[worst] < 1e-4, worst
