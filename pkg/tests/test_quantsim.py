import numpy as np
import pytest

from quantproxy import (BitAssignment, calibrate_activation_ranges, cost,
                        fake_quant_forward, forward, layer_quant_error,
                        quantize_tensor, quantized_accuracy)
from quantproxy.errors import DataError
from quantproxy.smallnet import layer_inventory

# Pinned by scripts/make_fixtures.py (it prints these after regeneration).
PROBE2_ERRORS = [0.7443549497001558, 8.681404830541416, 23.991083434738478,
                 18.61810394909319, 0.054081178307128955]
UNIFORM8_ACC = 0.9375
UNIFORM2_ACC = 0.203125


class TestQuantizeTensor:
    def test_symmetric_2bit_hand_example(self):
        out = quantize_tensor(np.array([-1.0, -0.4, 0.3, 1.0]), bits=2)
        assert np.array_equal(out, np.array([-1.0, 0.0, 0.0, 1.0]))

    def test_16bit_step_bound(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=257) * 5.0
        out = quantize_tensor(x, bits=16)
        bound = np.max(np.abs(x)) / (2 * (2 ** 15 - 1))
        assert np.max(np.abs(out - x)) <= bound + 1e-15

    def test_all_zero_guard(self):
        for bits in (2, 4, 8):
            out = quantize_tensor(np.zeros(7), bits=bits)
            assert np.array_equal(out, np.zeros(7))

    def test_affine_requires_range(self):
        with pytest.raises(DataError, match="range"):
            quantize_tensor(np.ones(3), bits=4, mode="affine")

    def test_bits_below_two_rejected(self):
        with pytest.raises(DataError, match="bits"):
            quantize_tensor(np.ones(3), bits=1)

    def test_non_finite_input_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            quantize_tensor(np.array([1.0, np.inf]), bits=4)

    @pytest.mark.parametrize("bits", [2, 4, 8, 16])
    def test_round_trip_bound_both_modes(self, bits):
        rng = np.random.default_rng(100 + bits)
        for _ in range(25):
            x = rng.normal(size=rng.integers(2, 50)) * rng.uniform(0.01, 100)
            sym = quantize_tensor(x, bits=bits)
            scale = np.max(np.abs(x)) / (2 ** (bits - 1) - 1)
            assert np.max(np.abs(sym - x)) <= scale / 2 + 1e-12
            lo, hi = float(x.min()), float(x.max())
            aff = quantize_tensor(x, bits=bits, mode="affine",
                                  value_range=(lo, hi))
            scale_a = (hi - lo) / (2 ** bits - 1)
            assert np.max(np.abs(aff - x)) <= scale_a / 2 + 1e-12

    @pytest.mark.parametrize("bits", [2, 4, 8, 16])
    def test_idempotence_bit_exact(self, bits):
        rng = np.random.default_rng(200 + bits)
        for _ in range(25):
            x = rng.normal(size=rng.integers(2, 50)) * rng.uniform(0.01, 100)
            once = quantize_tensor(x, bits=bits)
            twice = quantize_tensor(once, bits=bits)
            assert np.array_equal(once, twice)
            lo, hi = float(x.min()), float(x.max())
            once_a = quantize_tensor(x, bits=bits, mode="affine",
                                     value_range=(lo, hi))
            twice_a = quantize_tensor(once_a, bits=bits, mode="affine",
                                      value_range=(lo, hi))
            assert np.array_equal(once_a, twice_a)


class TestCalibration:
    def test_relu_layer_ranges_nonnegative(self, convnet, calib16):
        ranges = calibrate_activation_ranges(convnet, calib16)
        for layer, (lo, hi) in zip(convnet.layers, ranges.ranges):
            assert lo <= hi
            if layer.kind == "relu":
                assert lo >= 0.0

    def test_single_layer_min_max(self, mlp, calib16):
        ranges = calibrate_activation_ranges(mlp, calib16)
        _, acts = forward(mlp, calib16.inputs, capture=True)
        for (lo, hi), act in zip(ranges.ranges, acts):
            assert lo == float(act.min())
            assert hi == float(act.max())

    def test_matches_capture_all_then_minmax_oracle(self, convnet, calib16):
        # Brute force: accumulate activations sample by sample, then min/max.
        # BLAS blocking differs between batch shapes, so dense outputs can
        # move by an ulp; compare at 1e-12.
        per_layer = [[] for _ in convnet.layers]
        for i in range(len(calib16)):
            _, acts = forward(convnet, calib16.inputs[i:i + 1], capture=True)
            for j, a in enumerate(acts):
                per_layer[j].append(a)
        ranges = calibrate_activation_ranges(convnet, calib16)
        for j, (lo, hi) in enumerate(ranges.ranges):
            stacked = np.concatenate([a.ravel() for a in per_layer[j]])
            assert lo == pytest.approx(float(stacked.min()), abs=1e-12)
            assert hi == pytest.approx(float(stacked.max()), abs=1e-12)


class TestFakeQuantForward:
    def test_32bit_override_matches_full_precision(self, convnet, calib16):
        ranges = calibrate_activation_ranges(convnet, calib16)
        wide = BitAssignment.uniform(convnet, 32, activation_bits=32)
        quant = fake_quant_forward(convnet, wide, ranges, calib16.inputs)
        full = forward(convnet, calib16.inputs)
        assert np.max(np.abs(quant - full)) <= 1e-9

    def test_8bit_closer_than_2bit(self, convnet, calib16):
        ranges = calibrate_activation_ranges(convnet, calib16)
        full = forward(convnet, calib16.inputs)
        l2 = {}
        for bits in (2, 8):
            q = fake_quant_forward(convnet, BitAssignment.uniform(convnet, bits),
                                   ranges, calib16.inputs)
            l2[bits] = float(np.linalg.norm(q - full))
        assert l2[8] < l2[2]

    def test_assignment_length_mismatch_rejected(self, convnet, calib16):
        ranges = calibrate_activation_ranges(convnet, calib16)
        bad = BitAssignment(weight_bits=(8, 8))
        with pytest.raises(DataError, match="covers"):
            fake_quant_forward(convnet, bad, ranges, calib16.inputs)

    def test_deterministic(self, convnet, calib16):
        ranges = calibrate_activation_ranges(convnet, calib16)
        a = fake_quant_forward(convnet, BitAssignment.uniform(convnet, 4),
                               ranges, calib16.inputs)
        b = fake_quant_forward(convnet, BitAssignment.uniform(convnet, 4),
                               ranges, calib16.inputs)
        assert np.array_equal(a, b)

    def test_all_zero_weight_model_gives_zero_logits(self, tmp_path, calib16):
        import json
        from quantproxy import load_model
        doc = {
            "name": "zeros", "input_shape": [1, 8, 8],
            "layers": [
                {"kind": "flatten"},
                {"kind": "dense", "in_features": 64, "out_features": 4,
                 "weights": [0.0] * 256, "bias": [0.0] * 4},
            ],
        }
        path = tmp_path / "zeros.json"
        path.write_text(json.dumps(doc))
        model = load_model(str(path))
        ranges = calibrate_activation_ranges(model, calib16)
        for bits in (2, 4, 8):
            out = fake_quant_forward(model, BitAssignment.uniform(model, bits),
                                     ranges, calib16.inputs)
            assert np.array_equal(out, np.zeros((16, 4)))


class TestQuantizedAccuracy:
    def test_32bit_override_equals_full_accuracy(self, convnet, calib16, eval64):
        from quantproxy import accuracy
        ranges = calibrate_activation_ranges(convnet, calib16)
        wide = BitAssignment.uniform(convnet, 32, activation_bits=32)
        assert quantized_accuracy(convnet, wide, ranges, eval64) == \
            accuracy(convnet, eval64)

    def test_uniform_8bit_pinned(self, convnet, calib16, eval64):
        ranges = calibrate_activation_ranges(convnet, calib16)
        acc = quantized_accuracy(convnet, BitAssignment.uniform(convnet, 8),
                                 ranges, eval64)
        assert acc == UNIFORM8_ACC

    def test_2bit_no_better_than_8bit(self, convnet, calib16, eval64):
        ranges = calibrate_activation_ranges(convnet, calib16)
        acc8 = quantized_accuracy(convnet, BitAssignment.uniform(convnet, 8),
                                  ranges, eval64)
        acc2 = quantized_accuracy(convnet, BitAssignment.uniform(convnet, 2),
                                  ranges, eval64)
        assert acc2 <= acc8
        assert acc2 == UNIFORM2_ACC


class TestLayerQuantError:
    def test_32bit_probe_is_zero(self, convnet, calib16):
        for i in range(1, 6):
            assert layer_quant_error(convnet, i, 32, calib16) == 0.0

    def test_probe2_at_least_probe8_every_layer(self, convnet, calib16):
        for i in range(1, 6):
            e2 = layer_quant_error(convnet, i, 2, calib16)
            e8 = layer_quant_error(convnet, i, 8, calib16)
            assert e2 >= e8 >= 0.0

    def test_layer1_probe2_pinned(self, convnet, calib16):
        e = layer_quant_error(convnet, 1, 2, calib16)
        assert e > 0.0
        assert e == pytest.approx(PROBE2_ERRORS[0], rel=1e-12)

    def test_all_probe2_pinned(self, convnet, calib16):
        got = [layer_quant_error(convnet, i, 2, calib16) for i in range(1, 6)]
        assert got == pytest.approx(PROBE2_ERRORS, rel=1e-12)

    def test_bad_index_rejected(self, convnet, calib16):
        with pytest.raises(DataError, match="layer index"):
            layer_quant_error(convnet, 6, 2, calib16)


class TestCost:
    def test_uniform_8bit_compression(self, convnet):
        report = cost(convnet, BitAssignment.uniform(convnet, 8))
        assert report.compression_ratio == 0.75

    def test_fixture_mlp_param_bits(self, mlp):
        report = cost(mlp, BitAssignment(weight_bits=(4, 8)))
        assert report.param_bits == 4 * 2080 + 8 * 330

    def test_bops_linear_in_weight_bits(self, convnet):
        low = cost(convnet, BitAssignment.uniform(convnet, 4))
        high = cost(convnet, BitAssignment.uniform(convnet, 8))
        assert high.bops == 2 * low.bops

    def test_compression_strictly_decreasing_per_upgrade(self, convnet):
        inventory = layer_inventory(convnet)
        base = [2] * len(inventory)
        base_ratio = cost(convnet, BitAssignment(weight_bits=tuple(base))
                          ).compression_ratio
        for i in range(len(inventory)):
            bumped = list(base)
            bumped[i] = 4
            ratio = cost(convnet, BitAssignment(weight_bits=tuple(bumped))
                         ).compression_ratio
            assert ratio < base_ratio


class TestAssignmentSerialization:
    def test_round_trip(self, convnet):
        a = BitAssignment(weight_bits=(2, 4, 8, 4, 8), activation_bits=8)
        assert BitAssignment.from_json(a.to_json()) == a

    def test_bad_indices_rejected(self):
        from quantproxy.errors import ModelFormatError
        with pytest.raises(ModelFormatError, match="indices"):
            BitAssignment.from_json(
                {"activation_bits": 8,
                 "layers": [{"index": 1, "bits": 4}, {"index": 3, "bits": 4}]})
