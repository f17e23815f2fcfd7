"""Uniform quantization simulator and the cost/compression model.

Weights are quantized symmetrically per tensor, activations affinely per
tensor against calibrated ranges. The empirical per-layer sensitivity ground
truth is the logit MSE of quantizing exactly one layer's weights at a probe
bit-width; "quantization error" has no canonical definition in the
training-free MPQ literature, and this operationalization is deliberately
simple so it stays meaningful on a 16-sample calibration set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ModelFormatError
from .smallnet import Dataset, Model, apply_layer, forward, layer_inventory

# Weight bit menus per layer class; activations share one global width.
DEFAULT_MENUS: dict[str, tuple[int, ...]] = {"conv": (2, 4, 8), "linear": (4, 8)}
DEFAULT_ACTIVATION_BITS = 8
FLOAT_BITS = 32


@dataclass(frozen=True)
class BitAssignment:
    weight_bits: tuple[int, ...]    # one entry per parameterized layer, depth order
    activation_bits: int = DEFAULT_ACTIVATION_BITS

    def to_json(self) -> dict:
        return {
            "activation_bits": self.activation_bits,
            "layers": [{"index": i + 1, "bits": b}
                       for i, b in enumerate(self.weight_bits)],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BitAssignment":
        if not isinstance(doc, dict) or set(doc) - {"activation_bits", "layers"}:
            raise ModelFormatError("assignment must be {activation_bits, layers}")
        layers = doc.get("layers")
        if not isinstance(layers, list) or not layers:
            raise ModelFormatError("'layers' must be a non-empty list")
        bits: dict[int, int] = {}
        for entry in layers:
            if not isinstance(entry, dict) or set(entry) - {"index", "bits"}:
                raise ModelFormatError("layer entry must be {index, bits}")
            bits[int(entry["index"])] = int(entry["bits"])
        if sorted(bits) != list(range(1, len(bits) + 1)):
            raise ModelFormatError("layer indices must cover 1..L exactly once")
        act = doc.get("activation_bits", DEFAULT_ACTIVATION_BITS)
        return cls(weight_bits=tuple(bits[i] for i in sorted(bits)),
                   activation_bits=int(act))

    @classmethod
    def uniform(cls, model: Model, bits: int,
                activation_bits: int = DEFAULT_ACTIVATION_BITS) -> "BitAssignment":
        n = len(model.parameterized_layers)
        return cls(weight_bits=(bits,) * n, activation_bits=activation_bits)


@dataclass(frozen=True)
class CalibRanges:
    """Observed (min, max) of full-precision activations, one per model layer."""
    ranges: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class CostReport:
    param_bits: int
    bops: int
    compression_ratio: float

    def to_json(self) -> dict:
        return {"param_bits": self.param_bits, "bops": self.bops,
                "compression_ratio": self.compression_ratio,
                "compression_percent": round(100.0 * self.compression_ratio, 4)}


def quantize_tensor(values: np.ndarray, bits: int, mode: str = "symmetric",
                    value_range: tuple[float, float] | None = None) -> np.ndarray:
    """Quantize-then-dequantize a tensor at `bits`.

    symmetric: grid = {-k..k} * max_abs/k with k = 2^(bits-1) - 1.
    affine:    grid anchored to `value_range` with zero point, levels 0..2^bits-1;
               inputs outside the range clamp to it.
    An all-zero tensor (or a degenerate range) has scale 0 and maps to the
    single representable value.
    """
    x = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("quantize_tensor: non-finite input")
    if bits < 2:
        raise DataError("quantize_tensor: bits must be >= 2")
    if mode == "symmetric":
        if value_range is not None:
            max_abs = max(abs(value_range[0]), abs(value_range[1]))
        else:
            max_abs = float(np.max(np.abs(x))) if x.size else 0.0
        if max_abs == 0.0:
            return np.zeros_like(x)
        k = 2 ** (bits - 1) - 1
        scale = max_abs / k
        q = np.clip(np.round(x / scale), -k, k)
        # Dequantize via (q/k)*max_abs rather than q*scale: the max element
        # then reproduces max_abs exactly, which keeps re-quantization at the
        # same width bit-identical.
        return (q / k) * max_abs
    if mode == "affine":
        if value_range is None:
            raise DataError("quantize_tensor: affine mode requires a range")
        lo, hi = float(value_range[0]), float(value_range[1])
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise DataError("quantize_tensor: invalid range")
        levels = 2 ** bits - 1
        scale = (hi - lo) / levels
        if scale == 0.0:
            return np.full_like(x, lo)
        zero_point = round(-lo / scale)
        q = np.clip(np.round(x / scale) + zero_point, 0, levels)
        return (q - zero_point) * scale
    raise DataError(f"quantize_tensor: unknown mode {mode!r}")


def calibrate_activation_ranges(model: Model, calib: Dataset) -> CalibRanges:
    """Running (min, max) of each layer's output over the calibration set."""
    if len(calib) == 0:
        raise DataError("calibration set is empty")
    _, activations = forward(model, calib.inputs, capture=True)
    ranges = tuple((float(a.min()), float(a.max())) for a in activations)
    return CalibRanges(ranges=ranges)


def _check_assignment(model: Model, assignment: BitAssignment) -> None:
    n = len(model.parameterized_layers)
    if len(assignment.weight_bits) != n:
        raise DataError(
            f"assignment covers {len(assignment.weight_bits)} layers, model has {n}")


def fake_quant_forward(model: Model, assignment: BitAssignment,
                       ranges: CalibRanges, batch: np.ndarray) -> np.ndarray:
    """Forward pass with quantized weights and activations.

    Each parameterized layer runs with its weights symmetric-quantized at the
    assigned width and its output affine-quantized at the shared activation
    width using that layer's calibrated range. Other layer kinds pass through
    untouched.
    """
    _check_assignment(model, assignment)
    if len(ranges.ranges) != len(model.layers):
        raise DataError("calibration ranges do not cover every layer")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    param_idx = 0
    for li, layer in enumerate(model.layers):
        if layer.parameterized:
            # >= 32 bits is the full-precision override used by tests and
            # baselines; it bypasses quantization entirely.
            w_bits = assignment.weight_bits[param_idx]
            if w_bits < FLOAT_BITS:
                layer = layer.with_weights(quantize_tensor(layer.weights, w_bits))
            x = apply_layer(layer, x)
            if assignment.activation_bits < FLOAT_BITS:
                x = quantize_tensor(x, assignment.activation_bits, mode="affine",
                                    value_range=ranges.ranges[li])
            param_idx += 1
        else:
            x = apply_layer(layer, x)
    return x


def quantized_accuracy(model: Model, assignment: BitAssignment,
                       ranges: CalibRanges, data: Dataset) -> float:
    """accuracy() over the fake-quantized forward pass."""
    if len(data) == 0:
        raise DataError("quantized_accuracy needs a non-empty dataset")
    logits = fake_quant_forward(model, assignment, ranges, data.inputs)
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == data.labels))


def layer_quant_error(model: Model, layer_index: int, probe_bits: int,
                      calib: Dataset) -> float:
    """Logit MSE from quantizing only layer `layer_index`'s weights.

    layer_index is 1-based over parameterized layers; activations stay full
    precision; the MSE averages over calibration samples and classes.
    """
    params = model.parameterized_layers
    if not (1 <= layer_index <= len(params)):
        raise DataError(f"layer index {layer_index} outside 1..{len(params)}")
    if len(calib) == 0:
        raise DataError("calibration set is empty")
    if probe_bits >= FLOAT_BITS:
        return 0.0
    target_li = params[layer_index - 1][0]
    reference = forward(model, calib.inputs)
    x = calib.inputs
    for li, layer in enumerate(model.layers):
        if li == target_li:
            wq = quantize_tensor(layer.weights, probe_bits)
            x = apply_layer(layer.with_weights(wq), x)
        else:
            x = apply_layer(layer, x)
    return float(np.mean((x - reference) ** 2))


def cost(model: Model, assignment: BitAssignment) -> CostReport:
    """Parameter bits, BOPs (mac * w_bits * a_bits) and compression ratio."""
    _check_assignment(model, assignment)
    inventory = layer_inventory(model)
    param_bits = sum(m.param_count * b
                     for m, b in zip(inventory, assignment.weight_bits))
    bops = sum(m.mac_count * b * assignment.activation_bits
               for m, b in zip(inventory, assignment.weight_bits))
    total = sum(m.param_count for m in inventory)
    ratio = 1.0 - param_bits / (FLOAT_BITS * total)
    return CostReport(param_bits=param_bits, bops=bops, compression_ratio=ratio)


def compression_of_bits(inventory, weight_bits) -> float:
    """Compression ratio for a hypothetical per-layer bit vector."""
    param_bits = sum(m.param_count * b for m, b in zip(inventory, weight_bits))
    total = sum(m.param_count for m in inventory)
    return 1.0 - param_bits / (FLOAT_BITS * total)


def load_assignment(path: str) -> BitAssignment:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read assignment file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"invalid JSON: {e}") from None
    return BitAssignment.from_json(doc)
