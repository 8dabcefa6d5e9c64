"""Network construction, wiring, weight container, and training sanity."""

import numpy as np
import pytest

from canopy import tensor as T
from canopy.model import build_model, forward, load_weights, save_weights
from canopy.optim import Adam
from canopy.tensor import Tensor
from canopy.train import combined_loss

# Frozen regression values for the full published channel plan with 5 input
# channels (computed once from the plan; any change to the architecture
# must update these deliberately).
FULL_TRAINABLE_SCALARS = 17_046_788
FULL_TOTAL_SCALARS = 17_059_334
FULL_TENSOR_COUNT = 206


class TestBuild:
    def test_same_seed_bit_identical(self):
        a = build_model(seed=7)
        b = build_model(seed=7)
        assert list(a.tensors) == list(b.tensors)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name].data, b.tensors[name].data)

    def test_different_seed_differs(self):
        a = build_model(seed=7, width_scale=1 / 32)
        b = build_model(seed=8, width_scale=1 / 32)
        assert any(
            not np.array_equal(a.tensors[n].data, b.tensors[n].data) for n in a.tensors
        )

    def test_first_conv_weight_shape(self):
        # 5-channel input: 64 filters of 5x3x3 (planar layout Co,Ci,k,k)
        p = build_model(seed=0)
        assert p.tensors["backbone.block1.conv1.w"].data.shape == (64, 5, 3, 3)

    def test_parameter_count_regression(self):
        p = build_model(seed=0)
        assert p.n_trainable == FULL_TRAINABLE_SCALARS
        assert p.n_total == FULL_TOTAL_SCALARS
        assert len(p.tensors) == FULL_TENSOR_COUNT

    def test_glorot_sample_mean_within_3_sigma(self):
        p = build_model(seed=13)
        w = p.tensors["backbone.block3.conv2.w"].data
        fan_in = w.shape[1] * 9
        fan_out = w.shape[0] * 9
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        sigma = limit / np.sqrt(3.0)
        assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)

    def test_bias_and_bn_initialization(self):
        p = build_model(seed=3, width_scale=1 / 32)
        np.testing.assert_array_equal(p.tensors["backbone.block1.conv1.b"].data, 0.0)
        np.testing.assert_array_equal(p.tensors["backbone.block1.conv1.bn.gamma"].data, 1.0)
        np.testing.assert_array_equal(p.tensors["backbone.block1.conv1.bn.beta"].data, 0.0)
        np.testing.assert_array_equal(p.tensors["backbone.block1.conv1.bn.mean"].data, 0.0)
        np.testing.assert_array_equal(p.tensors["backbone.block1.conv1.bn.var"].data, 1.0)


class TestForward:
    def test_full_resolution_output_shapes(self):
        p = build_model(seed=0, width_scale=1 / 16)
        x = np.random.default_rng(0).standard_normal((1, 5, 64, 64)).astype(np.float32)
        out = forward(p, x, mode="infer")
        assert out.confidence.data.shape == (1, 1, 64, 64)
        assert out.attention.data.shape == (1, 1, 64, 64)

    def test_attention_strictly_inside_unit_interval(self):
        p = build_model(seed=1, width_scale=1 / 16)
        x = np.random.default_rng(1).standard_normal((2, 5, 32, 32)).astype(np.float32)
        att = forward(p, x, mode="infer").attention.data
        assert att.min() > 0.0 and att.max() < 1.0

    @pytest.mark.parametrize("hw", [16, 48, 80])
    def test_output_matches_input_size(self, hw):
        p = build_model(seed=2, width_scale=1 / 32)
        x = np.zeros((1, 5, hw, hw), np.float32)
        out = forward(p, x, mode="infer")
        assert out.confidence.data.shape[2:] == (hw, hw)

    def test_indivisible_dims_rejected(self):
        p = build_model(seed=0, width_scale=1 / 32)
        with pytest.raises(ValueError, match="divisible by 16"):
            forward(p, np.zeros((1, 5, 24, 32), np.float32))

    def test_wrong_channel_count_rejected(self):
        p = build_model(seed=0, width_scale=1 / 32)
        with pytest.raises(ValueError, match="5 input channels"):
            forward(p, np.zeros((1, 4, 32, 32), np.float32))

    def test_inference_is_pure(self):
        p = build_model(seed=4, width_scale=1 / 32)
        x = np.random.default_rng(4).standard_normal((1, 5, 32, 32)).astype(np.float32)
        rm_before = p.tensors["backbone.block1.conv1.bn.mean"].data.copy()
        a = forward(p, x, mode="infer").confidence.data
        b = forward(p, x, mode="infer").confidence.data
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(p.tensors["backbone.block1.conv1.bn.mean"].data,
                                      rm_before)

    def test_train_mode_updates_running_stats(self):
        p = build_model(seed=4, width_scale=1 / 32)
        x = np.random.default_rng(4).standard_normal((2, 5, 32, 32)).astype(np.float32)
        before = p.tensors["backbone.block1.conv1.bn.mean"].data.copy()
        forward(p, x, mode="train")
        assert not np.array_equal(p.tensors["backbone.block1.conv1.bn.mean"].data, before)

    def test_suppressed_attention_drives_confidence_to_head_bias(self):
        # zero the attention head's bn gain and push its shift far negative:
        # the gate saturates at ~0 and the confidence output collapses to
        # the final 1x1 conv's bias
        p = build_model(seed=5, width_scale=1 / 16)
        p.tensors["attention.head.conv.bn.gamma"].data[:] = 0.0
        p.tensors["attention.head.conv.bn.beta"].data[:] = -30.0
        bias = 0.7321
        p.tensors["confidence.head.conv.b"].data[:] = bias
        x = np.random.default_rng(5).standard_normal((1, 5, 32, 32)).astype(np.float32)
        out = forward(p, x, mode="infer")
        assert out.attention.data.max() < 1e-12
        np.testing.assert_allclose(out.confidence.data, bias, atol=1e-6)


class TestTrainingSanity:
    def test_single_example_step_decreases_loss(self):
        from canopy.data import build_attention_mask, build_target

        decreased = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            p = build_model(seed=seed, width_scale=1 / 32)
            x = Tensor(rng.standard_normal((1, 5, 32, 32)).astype(np.float32))
            pts = rng.uniform(4, 28, size=(3, 2))
            tgt = build_target(pts, 32, 32, 3.0)[None, None]
            msk = build_attention_mask(tgt, 0.001)

            def loss_of(params, mode):
                out = forward(params, x, mode=mode)
                return combined_loss(out.confidence, out.attention, tgt, msk, 0.01)

            # small probe step: Adam's first update moves every parameter by
            # +-lr (|m^/sqrt(v^)| = 1 at t=1), so lr must sit below the random
            # net's curvature scale for a one-step decrease to be expected
            opt = Adam(dict(p.trainable()), lr=1e-5)
            loss0 = loss_of(p, "train")
            opt.zero_grad()
            T.backward(loss0)
            opt.step()
            with T.no_grad():
                loss1 = loss_of(p, "train")
            if float(loss1.data) < float(loss0.data):
                decreased += 1
        assert decreased >= 9, f"loss decreased for only {decreased}/10 seeds"


class TestWeightContainer:
    def test_round_trip_byte_exact(self, tmp_path):
        p = build_model(seed=11, width_scale=1 / 16)
        path = tmp_path / "m.weights"
        save_weights(p, path)
        q = load_weights(path)
        assert list(q.tensors) == list(p.tensors)
        for n in p.tensors:
            np.testing.assert_array_equal(q.tensors[n].data, p.tensors[n].data)
            assert q.tensors[n].requires_grad == p.tensors[n].requires_grad
        assert q.meta == p.meta
        path2 = tmp_path / "m2.weights"
        save_weights(q, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_loaded_model_runs_identically(self, tmp_path):
        p = build_model(seed=12, width_scale=1 / 32)
        x = np.random.default_rng(12).standard_normal((1, 5, 32, 32)).astype(np.float32)
        ref = forward(p, x, mode="infer").confidence.data
        path = tmp_path / "m.weights"
        save_weights(p, path)
        q = load_weights(path)
        np.testing.assert_array_equal(forward(q, x, mode="infer").confidence.data, ref)

    def test_truncated_payload_rejected(self, tmp_path):
        from canopy.errors import WeightsFormatError

        p = build_model(seed=0, width_scale=1 / 32)
        path = tmp_path / "m.weights"
        save_weights(p, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-12])
        with pytest.raises(WeightsFormatError, match="truncated|longer"):
            load_weights(path)

    def test_bad_magic_rejected(self, tmp_path):
        from canopy.errors import WeightsFormatError

        path = tmp_path / "bogus.weights"
        path.write_bytes(b'{"magic":"nope"}\n')
        with pytest.raises(WeightsFormatError, match="magic"):
            load_weights(path)
