#!/usr/bin/env python3
"""Regenerate the committed fixture assets under fixtures/.

Deterministic: seeded numpy PCG64 streams, no training. Labels are the
fixture model's own argmax predictions, so full-precision accuracy is 1.0 by
construction and quantized accuracy measures pure quantization damage.

Run from the repository root:

    python scripts/make_fixtures.py

The script re-checks the sanity properties the test suite relies on (label
spread, probe-error monotonicity, 8-bit >= 2-bit accuracy) and prints the
pinned regression values consumed by tests/.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from quantproxy import (BitAssignment, CandidateEvaluator, accuracy,
                        builtin_norm_entropy_decay, calibrate_activation_ranges,
                        compute_layer_stats, layer_quant_error, load_dataset,
                        load_model, quantized_accuracy)
from quantproxy.dsl import make_candidate, parse
from quantproxy.fitness import EvalSettings
from quantproxy.stats import NORM_ENTROPY_DECAY

SEED = 20240817
OUT = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def dense(rng, fin, fout, gain=1.0):
    w = rng.normal(0.0, gain * np.sqrt(2.0 / fin), size=(fout, fin))
    b = rng.normal(0.0, 0.05, size=fout)
    return {"kind": "dense", "in_features": fin, "out_features": fout,
            "weights": [float(v) for v in w.ravel()],
            "bias": [float(v) for v in b.ravel()]}


def conv(rng, cin, cout, k=3, stride=1, padding=1, gain=1.0):
    fan_in = cin * k * k
    w = rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))
    b = rng.normal(0.0, 0.05, size=cout)
    return {"kind": "conv2d", "in_channels": cin, "out_channels": cout,
            "kernel_size": k, "stride": stride, "padding": padding,
            "weights": [float(v) for v in w.ravel()],
            "bias": [float(v) for v in b.ravel()]}


def binary_dense(rng, fin, fout, level, jitter):
    """Near-binary weights quantize almost losslessly at 2 bits, making the
    layer forward-strong but quantization-insensitive."""
    w = (level * np.sign(rng.normal(size=(fout, fin)))
         + rng.normal(0, jitter, size=(fout, fin)))
    b = rng.normal(0.0, 0.05, size=fout)
    return {"kind": "dense", "in_features": fin, "out_features": fout,
            "weights": [float(v) for v in w.ravel()],
            "bias": [float(v) for v in b.ravel()]}


def with_outliers(layer, factor, n, seed):
    """Scale n weights by `factor`; outliers blow up the symmetric 2-bit
    step size, making the layer highly quantization-sensitive."""
    w = np.asarray(layer["weights"])
    idx = np.random.default_rng(seed).choice(len(w), size=n, replace=False)
    w[idx] *= factor
    layer["weights"] = [float(v) for v in w]
    return layer


def build_convnet(rng):
    # Outliers and the near-binary head shape the sensitivity profile so
    # it peaks mid-network instead of growing monotonically with depth.
    return {
        "name": "fixture-convnet",
        "input_shape": [1, 8, 8],
        "layers": [
            conv(rng, 1, 4, gain=1.2),
            {"kind": "relu"},
            with_outliers(conv(rng, 4, 6, gain=1.8), 20.0, 2, 7),
            {"kind": "relu"},
            {"kind": "maxpool2d", "kernel_size": 2, "stride": 2},
            conv(rng, 6, 8, gain=0.6),
            {"kind": "relu"},
            {"kind": "maxpool2d", "kernel_size": 2, "stride": 2},
            {"kind": "flatten"},
            with_outliers(dense(rng, 32, 16, gain=0.9), 8.0, 2, 11),
            {"kind": "relu"},
            binary_dense(rng, 16, 4, 0.45, 0.02),
        ],
    }


def build_mlp(rng):
    return {
        "name": "fixture-mlp",
        "input_shape": [1, 8, 8],
        "layers": [
            {"kind": "flatten"},
            dense(rng, 64, 32),
            {"kind": "relu"},
            dense(rng, 32, 10),
        ],
    }


def center_output_bias(doc, path, probe_inputs):
    """Shift the final dense bias so probe logits average zero per class.

    Without this, stacked relus let one output unit dominate and every
    sample gets the same label. Deterministic construction, not training.
    """
    from quantproxy.smallnet import forward
    write(path, doc)
    model = load_model(path)
    logits = forward(model, probe_inputs)
    last = doc["layers"][-1]
    assert last["kind"] == "dense"
    centered = np.asarray(last["bias"]) - logits.mean(axis=0)
    last["bias"] = [float(v) for v in centered]
    write(path, doc)
    return load_model(path)


def build_dataset(model, inputs):
    from quantproxy.smallnet import forward
    logits = forward(model, inputs)
    labels = np.argmax(logits, axis=1)
    return {
        "num_classes": int(logits.shape[1]),
        "samples": [
            {"input": [float(v) for v in x.ravel()], "label": int(y)}
            for x, y in zip(inputs, labels)
        ],
    }


def write(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    print(f"wrote {path}")


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(SEED)
    convnet_doc = build_convnet(rng)
    mlp_doc = build_mlp(np.random.default_rng(SEED + 1))

    data_rng = np.random.default_rng(SEED + 2)
    probe_inputs = data_rng.random((256, 1, 8, 8))
    calib_inputs = data_rng.random((16, 1, 8, 8))
    eval_inputs = data_rng.random((64, 1, 8, 8))

    model = center_output_bias(convnet_doc, os.path.join(OUT, "convnet.json"),
                               probe_inputs)
    write(os.path.join(OUT, "mlp.json"), mlp_doc)

    calib_doc = build_dataset(model, calib_inputs)
    eval_doc = build_dataset(model, eval_inputs)
    write(os.path.join(OUT, "calib16.json"), calib_doc)
    write(os.path.join(OUT, "eval64.json"), eval_doc)

    calib = load_dataset(os.path.join(OUT, "calib16.json"), model.input_shape)
    eval_data = load_dataset(os.path.join(OUT, "eval64.json"), model.input_shape)

    # -- sanity gates the committed assets must satisfy ---------------------
    spread = len(set(calib_doc["samples"][i]["label"] for i in range(16)))
    assert spread >= 3, f"calibration labels collapse to {spread} classes"
    assert accuracy(model, eval_data) == 1.0

    errors2 = [layer_quant_error(model, i, 2, calib) for i in range(1, 6)]
    errors8 = [layer_quant_error(model, i, 8, calib) for i in range(1, 6)]
    assert all(e2 >= e8 for e2, e8 in zip(errors2, errors8))
    depth_rank = np.argsort(np.argsort(errors2))
    assert list(depth_rank) != sorted(depth_rank), \
        "probe errors must not be monotone in depth"

    ranges = calibrate_activation_ranges(model, calib)
    acc8 = quantized_accuracy(model, BitAssignment.uniform(model, 8), ranges,
                              eval_data)
    acc2 = quantized_accuracy(model, BitAssignment.uniform(model, 2), ranges,
                              eval_data)
    assert acc2 <= acc8, (acc2, acc8)

    # -- pinned values consumed by the test suite ---------------------------
    print()
    print(f"calib accuracy       : {accuracy(model, calib)!r}")
    print(f"eval  accuracy       : {accuracy(model, eval_data)!r}")
    print(f"probe2 errors        : {[repr(e) for e in errors2]}")
    print(f"probe8 errors        : {[repr(e) for e in errors8]}")
    print(f"uniform8 / uniform2  : {acc8!r} / {acc2!r}")
    stats = compute_layer_stats(model, calib)
    print(f"w_l2 per layer       : {[repr(s.w_l2) for s in stats]}")
    print(f"a_entropy per layer  : {[repr(s.a_entropy) for s in stats]}")
    evaluator = CandidateEvaluator(model, calib, eval_data, EvalSettings())
    builtin = make_candidate("builtin-ned", "norm*entropy*decay",
                             parse(NORM_ENTROPY_DECAY), "builtin")
    ev = evaluator.evaluate(builtin)
    print(f"builtin rho/acc/phi  : {ev.rho_sens!r} {ev.acc_quant!r} {ev.phi!r}")
    print(f"builtin assignment   : {ev.assignment.weight_bits}")
    print(f"builtin scores       : {[repr(v) for v in builtin_norm_entropy_decay(stats)]}")

    mlp = load_model(os.path.join(OUT, "mlp.json"))
    print(f"mlp param layers     : {len(mlp.parameterized_layers)}")


if __name__ == "__main__":
    main()
