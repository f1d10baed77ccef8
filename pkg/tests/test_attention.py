"""Tests for 2-D multi-head self-attention and attention-augmented convolution.

Oracles:
- hand-evaluated softmax row for the identity-projection case:
  softmax([1, 0]) = [e/(e+1), 1/(e+1)] = [0.73105857863, 0.26894142137].
- plain-numpy re-implementation of one attention head used as a
  dual route for the Tensor-graph implementation.
- structural facts: row-stochastic mixing, convex-hull containment,
  permutation equivariance, channel additivity, memory-estimate arithmetic.
"""

import math

import numpy as np
import pytest

from adsnn.attention import (
    AttentionConfig,
    AttentionWeights,
    attention_augmented_conv,
    attention_memory_estimate,
    default_attention_config,
    flatten_spatial,
    init_attention_weights,
    multi_head_attention,
    single_head_attention,
    unflatten_spatial,
)
from adsnn.tensor import ShapeError, Tensor, conv2d, tensor_sum
from gradcheck import gradcheck


def numpy_attention_head(x, wq, wk, wv, key_depth):
    """Independent reference: plain numpy scaled dot-product attention."""
    q, k, v = x @ wq, x @ wk, x @ wv
    logits = (q @ k.T) / math.sqrt(key_depth)
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


class TestSingleHead:
    def test_identity_projections_hand_value(self):
        # X = I2, all projections I2, key depth 1: logits = I2, and the
        # first output row is softmax([1, 0]) = [0.7311, 0.2689].
        eye = np.eye(2)
        out = single_head_attention(Tensor(eye), Tensor(eye), Tensor(eye), Tensor(eye), 1)
        np.testing.assert_allclose(out.data[0], [0.73105857863, 0.26894142137], atol=1e-4)
        np.testing.assert_allclose(out.data[1], [0.26894142137, 0.73105857863], atol=1e-4)

    def test_matches_numpy_reference(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((10, 6))
        wq = rng.standard_normal((6, 3))
        wk = rng.standard_normal((6, 3))
        wv = rng.standard_normal((6, 4))
        out = single_head_attention(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv), 3)
        np.testing.assert_allclose(out.data, numpy_attention_head(x, wq, wk, wv, 3), atol=1e-12)

    def test_scale_uses_sqrt_of_key_depth(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((5, 4))
        wq = rng.standard_normal((4, 4))
        wk = rng.standard_normal((4, 4))
        wv = rng.standard_normal((4, 2))
        # Scaling by sqrt(4) = 2 must differ from scaling by sqrt(1).
        out4 = single_head_attention(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv), 4)
        np.testing.assert_allclose(out4.data, numpy_attention_head(x, wq, wk, wv, 4), atol=1e-12)
        out1 = single_head_attention(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv), 1)
        assert np.abs(out4.data - out1.data).max() > 1e-6

    def test_mixing_weights_are_row_stochastic(self):
        # With X = I and identity value projection the output rows ARE the
        # attention probabilities: non-negative and summing to one.
        rng = np.random.default_rng(9)
        n = 8
        eye = np.eye(n)
        wq = rng.standard_normal((n, 3))
        wk = rng.standard_normal((n, 3))
        probs = single_head_attention(Tensor(eye), Tensor(wq), Tensor(wk), Tensor(eye), 3).data
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(n), atol=1e-6)
        assert probs.min() > 0.0

    def test_outputs_inside_value_convex_hull(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((12, 5))
        wq = rng.standard_normal((5, 2))
        wk = rng.standard_normal((5, 2))
        wv = rng.standard_normal((5, 3))
        out = single_head_attention(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv), 2).data
        values = x @ wv
        assert (out >= values.min(axis=0) - 1e-6).all()
        assert (out <= values.max(axis=0) + 1e-6).all()

    def test_zero_key_depth_rejected(self):
        eye = Tensor(np.eye(2))
        with pytest.raises(ValueError):
            single_head_attention(eye, eye, eye, eye, 0)


class TestConfig:
    def test_per_head_depths(self):
        cfg = AttentionConfig(num_heads=4, key_depth=128, value_depth=64)
        assert cfg.head_key_depth == 32
        assert cfg.head_value_depth == 16

    def test_default_config_quarter_rounded_to_heads(self):
        cfg = default_attention_config(512)
        assert (cfg.num_heads, cfg.key_depth, cfg.value_depth) == (4, 128, 128)
        # ceil(0.25 * 10) = 3, rounded up to a multiple of 4 heads -> 4.
        cfg = default_attention_config(10)
        assert (cfg.key_depth, cfg.value_depth) == (4, 4)
        cfg = default_attention_config(1)
        assert cfg.key_depth == 4
        cfg = default_attention_config(8, num_heads=2)
        assert (cfg.num_heads, cfg.key_depth, cfg.value_depth) == (2, 2, 2)

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            AttentionConfig(num_heads=0, key_depth=4, value_depth=4)
        with pytest.raises(ValueError):
            AttentionConfig(num_heads=2, key_depth=3, value_depth=4)
        with pytest.raises(ValueError):
            AttentionConfig(num_heads=2, key_depth=4, value_depth=3)
        with pytest.raises(ValueError):
            AttentionConfig(num_heads=2, key_depth=0, value_depth=4)
        with pytest.raises(ValueError):
            AttentionConfig(num_heads=2, key_depth=-2, value_depth=2)

    def test_disabled_attention_config_allowed(self):
        cfg = AttentionConfig(num_heads=4, key_depth=0, value_depth=0)
        assert cfg.value_depth == 0


class TestMultiHead:
    def test_single_head_composition_matches_manual(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((3, 4, 5))
        cfg = AttentionConfig(num_heads=1, key_depth=2, value_depth=3)
        w = init_attention_weights(rng, 5, cfg, dtype=np.float64)
        out = multi_head_attention(Tensor(x), w, cfg)
        flat = x.reshape(12, 5)
        head = numpy_attention_head(flat, w.query[0].data, w.key[0].data, w.value[0].data, 2)
        expected = (head @ w.output.data).reshape(3, 4, 3)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)
        assert out.shape == (3, 4, 3)

    def test_two_head_composition_matches_manual(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 3, 4))
        cfg = AttentionConfig(num_heads=2, key_depth=4, value_depth=6)
        w = init_attention_weights(rng, 4, cfg, dtype=np.float64)
        out = multi_head_attention(Tensor(x), w, cfg)
        flat = x.reshape(6, 4)
        heads = [
            numpy_attention_head(flat, w.query[h].data, w.key[h].data, w.value[h].data, 2)
            for h in range(2)
        ]
        expected = (np.concatenate(heads, axis=1) @ w.output.data).reshape(2, 3, 6)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_permutation_equivariance(self):
        # Content-only attention has no positional terms: permuting the
        # flattened positions permutes the outputs identically.
        rng = np.random.default_rng(13)
        x = rng.standard_normal((6, 1, 5))
        cfg = AttentionConfig(num_heads=2, key_depth=4, value_depth=6)
        w = init_attention_weights(rng, 5, cfg, dtype=np.float64)
        base = multi_head_attention(Tensor(x), w, cfg).data
        perm = rng.permutation(6)
        permuted = multi_head_attention(Tensor(x[perm]), w, cfg).data
        np.testing.assert_allclose(permuted, base[perm], atol=1e-6)

    def test_batched_input_matches_per_item(self):
        rng = np.random.default_rng(33)
        batch = rng.standard_normal((4, 3, 2, 5))
        cfg = AttentionConfig(num_heads=2, key_depth=4, value_depth=6)
        w = init_attention_weights(rng, 5, cfg, dtype=np.float64)
        whole = multi_head_attention(Tensor(batch), w, cfg).data
        assert whole.shape == (4, 3, 2, 6)
        for i in range(4):
            single = multi_head_attention(Tensor(batch[i]), w, cfg).data
            np.testing.assert_allclose(whole[i], single, atol=1e-12)

    def test_head_count_mismatch_rejected(self):
        rng = np.random.default_rng(14)
        cfg = AttentionConfig(num_heads=2, key_depth=4, value_depth=4)
        w = init_attention_weights(rng, 5, cfg)
        bad = AttentionConfig(num_heads=4, key_depth=4, value_depth=4)
        with pytest.raises(ValueError):
            multi_head_attention(Tensor(np.zeros((2, 2, 5))), w, bad)

    def test_rank_validation(self):
        rng = np.random.default_rng(15)
        cfg = AttentionConfig(num_heads=1, key_depth=2, value_depth=2)
        w = init_attention_weights(rng, 5, cfg)
        with pytest.raises(ShapeError):
            multi_head_attention(Tensor(np.zeros((4, 5))), w, cfg)


class TestFlatten:
    def test_round_trip_and_row_order(self):
        x = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        flat = flatten_spatial(Tensor(x))
        assert flat.shape == (6, 4)
        # Row index h*W + w: position (1, 2) lands at row 5.
        np.testing.assert_array_equal(flat.data[5], x[1, 2])
        back = unflatten_spatial(flat, 2, 3)
        np.testing.assert_array_equal(back.data, x)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            flatten_spatial(Tensor(np.zeros((2, 3))))
        with pytest.raises(ShapeError):
            unflatten_spatial(Tensor(np.zeros((5, 4))), 2, 3)


class TestAugmentedConv:
    def test_channel_additivity_and_spatial_preservation(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((5, 4, 3))
        kernel = rng.standard_normal((3, 3, 3, 6))
        cfg = AttentionConfig(num_heads=2, key_depth=2, value_depth=4)
        w = init_attention_weights(rng, 3, cfg, dtype=np.float64)
        out = attention_augmented_conv(Tensor(x), Tensor(kernel), w, cfg)
        assert out.shape == (5, 4, 6 + 4)

    def test_convolution_channels_come_first(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((4, 4, 2))
        kernel = rng.standard_normal((3, 3, 2, 3))
        cfg = AttentionConfig(num_heads=1, key_depth=2, value_depth=2)
        w = init_attention_weights(rng, 2, cfg, dtype=np.float64)
        out = attention_augmented_conv(Tensor(x), Tensor(kernel), w, cfg)
        conv_only = conv2d(Tensor(x), Tensor(kernel), stride=1, padding="same")
        np.testing.assert_allclose(out.data[..., :3], conv_only.data, atol=1e-12)
        attn_only = multi_head_attention(Tensor(x), w, cfg)
        np.testing.assert_allclose(out.data[..., 3:], attn_only.data, atol=1e-12)

    def test_zero_value_depth_degenerates_to_convolution(self):
        rng = np.random.default_rng(18)
        x = rng.standard_normal((4, 4, 2))
        kernel = rng.standard_normal((3, 3, 2, 3))
        cfg = AttentionConfig(num_heads=4, key_depth=0, value_depth=0)
        out = attention_augmented_conv(Tensor(x), Tensor(kernel), AttentionWeights(), cfg)
        conv_only = conv2d(Tensor(x), Tensor(kernel), stride=1, padding="same")
        np.testing.assert_array_equal(out.data, conv_only.data)
        assert out.shape == (4, 4, 3)

    def test_zero_value_weights_silence_attention_branch(self):
        rng = np.random.default_rng(19)
        x = rng.standard_normal((3, 3, 2))
        kernel = rng.standard_normal((3, 3, 2, 2))
        cfg = AttentionConfig(num_heads=1, key_depth=2, value_depth=2)
        w = init_attention_weights(rng, 2, cfg, dtype=np.float64)
        w.value[0] = Tensor(np.zeros((2, 2)))
        out = attention_augmented_conv(Tensor(x), Tensor(kernel), w, cfg)
        assert np.array_equal(out.data[..., 2:], np.zeros((3, 3, 2)))

    def test_batched_input_matches_per_item(self):
        rng = np.random.default_rng(34)
        batch = rng.standard_normal((3, 4, 4, 2))
        kernel = rng.standard_normal((3, 3, 2, 3))
        cfg = AttentionConfig(num_heads=1, key_depth=2, value_depth=2)
        w = init_attention_weights(rng, 2, cfg, dtype=np.float64)
        whole = attention_augmented_conv(Tensor(batch), Tensor(kernel), w, cfg).data
        assert whole.shape == (3, 4, 4, 5)
        for i in range(3):
            single = attention_augmented_conv(Tensor(batch[i]), Tensor(kernel), w, cfg).data
            np.testing.assert_allclose(whole[i], single, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(20)
        cfg = AttentionConfig(num_heads=2, key_depth=2, value_depth=2)

        def fn(x, kern, q0, k0, v0, q1, k1, v1, wo):
            w = AttentionWeights(query=[q0, q1], key=[k0, k1], value=[v0, v1], output=wo)
            return tensor_sum(attention_augmented_conv(x, kern, w, cfg))

        gradcheck(
            fn,
            [
                rng.standard_normal((3, 3, 2)),
                0.3 * rng.standard_normal((3, 3, 2, 2)),
                rng.standard_normal((2, 1)),
                rng.standard_normal((2, 1)),
                rng.standard_normal((2, 1)),
                rng.standard_normal((2, 1)),
                rng.standard_normal((2, 1)),
                rng.standard_normal((2, 1)),
                rng.standard_normal((2, 2)),
            ],
            tol=1e-4,
        )

    def test_batched_gradients_match_finite_differences(self):
        rng = np.random.default_rng(35)
        cfg = AttentionConfig(num_heads=1, key_depth=2, value_depth=2)

        def fn(x, kern, q, k, v, wo):
            w = AttentionWeights(query=[q], key=[k], value=[v], output=wo)
            return tensor_sum(attention_augmented_conv(x, kern, w, cfg))

        gradcheck(
            fn,
            [
                rng.standard_normal((2, 3, 3, 2)),
                0.3 * rng.standard_normal((3, 3, 2, 2)),
                rng.standard_normal((2, 2)),
                rng.standard_normal((2, 2)),
                rng.standard_normal((2, 2)),
                rng.standard_normal((2, 2)),
            ],
            tol=1e-4,
        )


class TestMemoryEstimate:
    def test_worked_values(self):
        assert attention_memory_estimate(7, 7, 4) == 9604
        assert attention_memory_estimate(2, 3, 5) == 180
        assert attention_memory_estimate(1, 1, 1) == 1

    def test_quadratic_growth(self):
        # Doubling both spatial dims multiplies the map size by 16.
        assert attention_memory_estimate(14, 14, 4) == 16 * attention_memory_estimate(7, 7, 4)


class TestWeights:
    def test_init_shapes_and_param_count(self):
        rng = np.random.default_rng(21)
        cfg = AttentionConfig(num_heads=4, key_depth=8, value_depth=12)
        w = init_attention_weights(rng, 16, cfg)
        assert len(w.query) == len(w.key) == len(w.value) == 4
        assert w.query[0].shape == (16, 2)
        assert w.value[0].shape == (16, 3)
        assert w.output.shape == (12, 12)
        assert w.param_count() == 4 * (16 * 2 + 16 * 2 + 16 * 3) + 12 * 12
        assert all(t.requires_grad for t in w.tensors())

    def test_disabled_config_yields_empty_weights(self):
        rng = np.random.default_rng(22)
        cfg = AttentionConfig(num_heads=4, key_depth=0, value_depth=0)
        w = init_attention_weights(rng, 16, cfg)
        assert w.tensors() == []
        assert w.param_count() == 0
